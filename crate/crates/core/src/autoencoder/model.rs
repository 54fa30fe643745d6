use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{deconv_padding, same_padding, CaeArchitecture, DecoderStage, Shape};
use super::ops::{col2im, gemm, im2col, max_pool2, Patch};
use super::AutoencoderError;

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        patch: Patch,
        cout: usize,
        w: usize,
        b: usize,
    },
    /// `patch` describes the output map as seen by the adjoint convolution.
    Deconv {
        patch: Patch,
        cin: usize,
        w: usize,
        b: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        w: usize,
        b: usize,
    },
    MaxPool {
        shape: Shape,
    },
    GlobalAvg {
        channels: usize,
        area: usize,
    },
    Relu,
    Sigmoid,
}

/// Activations recorded by a forward pass, needed for backprop.
struct Trace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
}

/// Convolutional autoencoder with a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Cae {
    arch: CaeArchitecture,
    layers: Vec<Layer>,
    /// Number of leading layers that make up the encoder.
    encoder_layers: usize,
    params: Vec<f64>,
}

impl Cae {
    /// Fresh network with He-normal weights and zero biases drawn from `seed`.
    pub fn new(arch: CaeArchitecture, seed: u64) -> Result<Self, AutoencoderError> {
        let (layers, encoder_layers, count) = build_layers(&arch)?;
        let mut params = vec![0.0; count];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &layers {
            let (w, n, fan_in) = match *layer {
                Layer::Conv { patch, cout, w, .. } => (w, cout * patch.rows(), patch.rows() as f64),
                Layer::Deconv { patch, cin, w, .. } => (
                    w,
                    cin * patch.rows(),
                    (cin * patch.k * patch.k) as f64 / (patch.stride * patch.stride) as f64,
                ),
                Layer::Dense {
                    inputs, outputs, w, ..
                } => (w, inputs * outputs, inputs as f64),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                .map_err(|e| AutoencoderError::Architecture(e.to_string()))?;
            for p in &mut params[w..w + n] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            arch,
            layers,
            encoder_layers,
            params,
        })
    }

    pub fn from_params(arch: CaeArchitecture, params: Vec<f64>) -> Result<Self, AutoencoderError> {
        let (layers, encoder_layers, count) = build_layers(&arch)?;
        if params.len() != count {
            return Err(AutoencoderError::Architecture(format!(
                "expected {count} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            arch,
            layers,
            encoder_layers,
            params,
        })
    }

    pub fn arch(&self) -> &CaeArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    fn check_input(&self, input: &[f64]) -> Result<(), AutoencoderError> {
        let expected = self.arch.input_shape().len();
        if input.len() != expected {
            return Err(AutoencoderError::SizeMismatch {
                expected: self.arch.input_size,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Bottleneck vector for one `[c, h, w]` input in `[0, 1]`.
    pub fn encode(&self, input: &[f64]) -> Result<Vec<f64>, AutoencoderError> {
        self.check_input(input)?;
        let trace = self.forward(input, self.encoder_layers);
        Ok(trace.acts.into_iter().last().unwrap_or_default())
    }

    /// Reconstruction and its mean squared error against `input`.
    pub fn reconstruct(&self, input: &[f64]) -> Result<(Vec<f64>, f64), AutoencoderError> {
        self.check_input(input)?;
        let out = self
            .forward(input, self.layers.len())
            .acts
            .into_iter()
            .last()
            .unwrap_or_default();
        let loss = mse(&out, input);
        Ok((out, loss))
    }

    /// Adds `scale * dLoss/dParams` into `grad` and returns the loss.
    pub fn accumulate_gradient(
        &self,
        input: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, AutoencoderError> {
        self.check_input(input)?;
        assert_eq!(grad.len(), self.params.len());
        let trace = self.forward(input, self.layers.len());
        let out = &trace.acts[self.layers.len()];
        let n = out.len() as f64;
        let loss = mse(out, input);
        let d_out: Vec<f64> = out
            .iter()
            .zip(input)
            .map(|(y, t)| scale * 2.0 * (y - t) / n)
            .collect();
        self.backward(&trace, d_out, grad);
        Ok(loss)
    }

    fn forward(&self, input: &[f64], upto: usize) -> Trace {
        let mut acts = Vec::with_capacity(upto + 1);
        let mut argmax = vec![Vec::new(); upto];
        acts.push(input.to_vec());
        let p = &self.params;
        for (li, layer) in self.layers[..upto].iter().enumerate() {
            let x = &acts[li];
            let y = match *layer {
                Layer::Conv { patch, cout, w, b } => {
                    let mut cols = vec![0.0; patch.rows() * patch.cols()];
                    im2col(x, &patch, &mut cols);
                    let n = patch.cols();
                    let mut y = vec![0.0; cout * n];
                    for (c, row) in y.chunks_exact_mut(n).enumerate() {
                        row.fill(p[b + c]);
                    }
                    gemm(cout, patch.rows(), n, &p[w..], false, &cols, false, 1.0, &mut y);
                    y
                }
                Layer::Deconv { patch, cin, w, b } => {
                    let n = patch.cols();
                    let mut cols = vec![0.0; patch.rows() * n];
                    gemm(patch.rows(), cin, n, &p[w..], true, x, false, 0.0, &mut cols);
                    let area = patch.h * patch.w;
                    let mut y = vec![0.0; patch.c * area];
                    for (c, plane) in y.chunks_exact_mut(area).enumerate() {
                        plane.fill(p[b + c]);
                    }
                    col2im(&cols, &patch, &mut y);
                    y
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    w,
                    b,
                } => {
                    let mut y = p[b..b + outputs].to_vec();
                    gemm(outputs, inputs, 1, &p[w..], false, x, false, 1.0, &mut y);
                    y
                }
                Layer::MaxPool { shape } => {
                    let n = shape.c * (shape.h / 2) * (shape.w / 2);
                    let mut y = vec![0.0; n];
                    let mut arg = vec![0; n];
                    max_pool2(x, shape.c, shape.h, shape.w, &mut y, &mut arg);
                    argmax[li] = arg;
                    y
                }
                Layer::GlobalAvg { channels, area } => (0..channels)
                    .map(|c| x[c * area..(c + 1) * area].iter().sum::<f64>() / area as f64)
                    .collect(),
                Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                Layer::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            };
            acts.push(y);
        }
        Trace { acts, argmax }
    }

    fn backward(&self, trace: &Trace, mut dy: Vec<f64>, grad: &mut [f64]) {
        let p = &self.params;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[li];
            let y = &trace.acts[li + 1];
            let need_dx = li > 0;
            dy = match *layer {
                Layer::Conv { patch, cout, w, b } => {
                    let n = patch.cols();
                    let rows = patch.rows();
                    let mut cols = vec![0.0; rows * n];
                    im2col(x, &patch, &mut cols);
                    gemm(cout, n, rows, &dy, false, &cols, true, 1.0, &mut grad[w..w + cout * rows]);
                    for c in 0..cout {
                        grad[b + c] += dy[c * n..(c + 1) * n].iter().sum::<f64>();
                    }
                    if !need_dx {
                        break;
                    }
                    gemm(rows, cout, n, &p[w..], true, &dy, false, 0.0, &mut cols);
                    let mut dx = vec![0.0; x.len()];
                    col2im(&cols, &patch, &mut dx);
                    dx
                }
                Layer::Deconv { patch, cin, w, b } => {
                    let n = patch.cols();
                    let rows = patch.rows();
                    let mut dcols = vec![0.0; rows * n];
                    im2col(&dy, &patch, &mut dcols);
                    gemm(cin, n, rows, x, false, &dcols, true, 1.0, &mut grad[w..w + cin * rows]);
                    let area = patch.h * patch.w;
                    for c in 0..patch.c {
                        grad[b + c] += dy[c * area..(c + 1) * area].iter().sum::<f64>();
                    }
                    if !need_dx {
                        break;
                    }
                    let mut dx = vec![0.0; cin * n];
                    gemm(cin, rows, n, &p[w..], false, &dcols, false, 0.0, &mut dx);
                    dx
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    w,
                    b,
                } => {
                    gemm(outputs, 1, inputs, &dy, false, x, false, 1.0, &mut grad[w..w + outputs * inputs]);
                    for (g, d) in grad[b..b + outputs].iter_mut().zip(&dy) {
                        *g += d;
                    }
                    if !need_dx {
                        break;
                    }
                    let mut dx = vec![0.0; inputs];
                    gemm(inputs, outputs, 1, &p[w..], true, &dy, false, 0.0, &mut dx);
                    dx
                }
                Layer::MaxPool { .. } => {
                    let mut dx = vec![0.0; x.len()];
                    for (&i, d) in trace.argmax[li].iter().zip(&dy) {
                        dx[i] += d;
                    }
                    dx
                }
                Layer::GlobalAvg { channels, area } => {
                    let mut dx = vec![0.0; channels * area];
                    for c in 0..channels {
                        let g = dy[c] / area as f64;
                        dx[c * area..(c + 1) * area].fill(g);
                    }
                    dx
                }
                Layer::Relu => dy
                    .iter()
                    .zip(x)
                    .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                    .collect(),
                Layer::Sigmoid => dy
                    .iter()
                    .zip(y)
                    .map(|(&d, &s)| d * s * (1.0 - s))
                    .collect(),
            };
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean squared error between two equal-length buffers.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn build_layers(arch: &CaeArchitecture) -> Result<(Vec<Layer>, usize, usize), AutoencoderError> {
    arch.check_shapes()?;
    let mut layers = Vec::new();
    let mut off = 0usize;
    let mut alloc = |n: usize| {
        let at = off;
        off += n;
        at
    };
    let mut s = arch.input_shape();
    for st in &arch.encoder {
        let patch = Patch::new(s.c, s.h, s.w, st.kernel, st.stride, same_padding(st.kernel));
        let w = alloc(st.channels * patch.rows());
        let b = alloc(st.channels);
        layers.push(Layer::Conv {
            patch,
            cout: st.channels,
            w,
            b,
        });
        layers.push(Layer::Relu);
        s = Shape {
            c: st.channels,
            h: patch.out_h,
            w: patch.out_w,
        };
        if st.pool {
            layers.push(Layer::MaxPool { shape: s });
            s.h /= 2;
            s.w /= 2;
        }
    }
    if let Some(p) = arch.projection {
        let patch = Patch::new(s.c, s.h, s.w, 1, 1, 0);
        let w = alloc(p * patch.rows());
        let b = alloc(p);
        layers.push(Layer::Conv {
            patch,
            cout: p,
            w,
            b,
        });
        s.c = p;
    }
    layers.push(Layer::GlobalAvg {
        channels: s.c,
        area: s.h * s.w,
    });
    let encoder_layers = layers.len();
    let mut s = Shape { c: s.c, h: 1, w: 1 };

    let last = arch.decoder.len() - 1;
    for (i, st) in arch.decoder.iter().enumerate() {
        match *st {
            DecoderStage::Dense {
                channels,
                height,
                width,
            } => {
                let out = Shape {
                    c: channels,
                    h: height,
                    w: width,
                };
                let w = alloc(out.len() * s.len());
                let b = alloc(out.len());
                layers.push(Layer::Dense {
                    inputs: s.len(),
                    outputs: out.len(),
                    w,
                    b,
                });
                s = out;
            }
            DecoderStage::Deconv {
                channels,
                kernel,
                stride,
            } => {
                let pad = deconv_padding(kernel);
                let oh = (s.h - 1) * stride + kernel - 2 * pad;
                let ow = (s.w - 1) * stride + kernel - 2 * pad;
                let patch = Patch::new(channels, oh, ow, kernel, stride, pad);
                debug_assert_eq!((patch.out_h, patch.out_w), (s.h, s.w));
                let w = alloc(s.c * patch.rows());
                let b = alloc(channels);
                layers.push(Layer::Deconv {
                    patch,
                    cin: s.c,
                    w,
                    b,
                });
                s = Shape {
                    c: channels,
                    h: oh,
                    w: ow,
                };
            }
        }
        layers.push(if i == last { Layer::Sigmoid } else { Layer::Relu });
    }
    Ok((layers, encoder_layers, off))
}
