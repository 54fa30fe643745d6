use serde::{Deserialize, Serialize};

use super::AutoencoderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 224x224 input, 16-layer VGG encoder, 512-d embedding.
    Paper,
    /// 64x64 input, 4 conv stages, 64-d embedding.
    Desk,
    /// Anything built by hand, e.g. the tiny gradient-check network.
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (expected paper or desk)")),
        }
    }
}

/// One encoder convolution, always followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 2x2 max pooling after the activation.
    pub pool: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecoderStage {
    /// Fully connected layer whose output is viewed as a `channels x height x width` map.
    Dense {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Transposed convolution. Padding is 1 for kernels of 3 or more, else 0.
    Deconv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaeArchitecture {
    pub preset: Preset,
    pub input_size: usize,
    pub input_channels: usize,
    pub encoder: Vec<ConvStage>,
    /// Optional 1x1 linear convolution applied before global average pooling.
    pub projection: Option<usize>,
    pub decoder: Vec<DecoderStage>,
}

/// Activation shape, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Padding used for a kernel of size `k`.
pub fn same_padding(k: usize) -> usize {
    k / 2
}

pub fn deconv_padding(k: usize) -> usize {
    if k >= 3 {
        1
    } else {
        0
    }
}

impl CaeArchitecture {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
            Preset::Custom => Self::tiny(),
        }
    }

    /// VGG16 convolutions (13 convs, 5 pools), global average pooling to 512,
    /// then a 784-unit dense layer viewed as 28x28x1 and six transposed
    /// convolutions 28 -> 28 -> 56 -> 56 -> 112 -> 224 -> 224x3.
    pub fn paper() -> Self {
        let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        let mut encoder = Vec::new();
        for (channels, convs) in blocks {
            for i in 0..convs {
                encoder.push(ConvStage {
                    channels,
                    kernel: 3,
                    stride: 1,
                    pool: i + 1 == convs,
                });
            }
        }
        let dc = |channels, kernel, stride| DecoderStage::Deconv {
            channels,
            kernel,
            stride,
        };
        Self {
            preset: Preset::Paper,
            input_size: 224,
            input_channels: 3,
            encoder,
            projection: None,
            decoder: vec![
                DecoderStage::Dense {
                    channels: 1,
                    height: 28,
                    width: 28,
                },
                dc(64, 3, 1),
                dc(64, 4, 2),
                dc(32, 3, 1),
                dc(32, 4, 2),
                dc(16, 4, 2),
                dc(3, 3, 1),
            ],
        }
    }

    /// Four 3x3 conv + pool stages (16, 32, 64, 128 channels), a 1x1
    /// projection to 64 and global average pooling; the decoder is a dense
    /// layer to 128x4x4 and four stride-2 transposed convolutions back to 64x64x3.
    pub fn desk() -> Self {
        let encoder = [16, 32, 64, 128]
            .into_iter()
            .map(|c| ConvStage {
                channels: c,
                kernel: 3,
                stride: 1,
                pool: true,
            })
            .collect();
        let up = |channels| DecoderStage::Deconv {
            channels,
            kernel: 4,
            stride: 2,
        };
        Self {
            preset: Preset::Desk,
            input_size: 64,
            input_channels: 3,
            encoder,
            projection: Some(64),
            decoder: vec![
                DecoderStage::Dense {
                    channels: 128,
                    height: 4,
                    width: 4,
                },
                up(64),
                up(32),
                up(16),
                up(3),
            ],
        }
    }

    /// Two conv stages on 8x8 input; small enough for exhaustive finite differences.
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Custom,
            input_size: 8,
            input_channels: 3,
            encoder: vec![
                ConvStage {
                    channels: 4,
                    kernel: 3,
                    stride: 1,
                    pool: true,
                },
                ConvStage {
                    channels: 6,
                    kernel: 3,
                    stride: 1,
                    pool: true,
                },
            ],
            projection: None,
            decoder: vec![
                DecoderStage::Dense {
                    channels: 4,
                    height: 2,
                    width: 2,
                },
                DecoderStage::Deconv {
                    channels: 4,
                    kernel: 4,
                    stride: 2,
                },
                DecoderStage::Deconv {
                    channels: 3,
                    kernel: 4,
                    stride: 2,
                },
            ],
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape {
            c: self.input_channels,
            h: self.input_size,
            w: self.input_size,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.projection
            .or_else(|| self.encoder.last().map(|s| s.channels))
            .unwrap_or(self.input_channels)
    }

    /// Walks every stage and checks that the decoder lands back on the input shape.
    /// Returns the total parameter count.
    pub fn check_shapes(&self) -> Result<usize, AutoencoderError> {
        let err = |m: String| Err(AutoencoderError::Architecture(m));
        const MAX_DIM: usize = 4096;
        if self.input_size == 0 || self.input_size > MAX_DIM {
            return err(format!("input size {} out of range", self.input_size));
        }
        if self.input_channels == 0 || self.input_channels > MAX_DIM {
            return err(format!("input channels {} out of range", self.input_channels));
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return err("encoder and decoder need at least one stage".into());
        }
        if self.encoder.len() > 64 || self.decoder.len() > 64 {
            return err("too many stages".into());
        }
        let mut params: usize = 0;
        let mut add = |n: usize| -> Result<(), AutoencoderError> {
            params = params
                .checked_add(n)
                .filter(|&p| p <= 1 << 28)
                .ok_or_else(|| AutoencoderError::Architecture("parameter count too large".into()))?;
            Ok(())
        };
        let mut s = self.input_shape();
        for (i, st) in self.encoder.iter().enumerate() {
            if st.channels == 0 || st.channels > MAX_DIM || st.kernel == 0 || st.kernel > 15 {
                return err(format!("encoder stage {i}: bad channels/kernel"));
            }
            if st.stride == 0 || st.stride > 8 {
                return err(format!("encoder stage {i}: bad stride"));
            }
            let pad = same_padding(st.kernel);
            if s.h + 2 * pad < st.kernel {
                return err(format!("encoder stage {i}: kernel larger than input"));
            }
            let h = (s.h + 2 * pad - st.kernel) / st.stride + 1;
            let w = (s.w + 2 * pad - st.kernel) / st.stride + 1;
            add(s.c * st.channels * st.kernel * st.kernel + st.channels)?;
            s = Shape {
                c: st.channels,
                h,
                w,
            };
            if st.pool {
                if s.h < 2 || s.w < 2 {
                    return err(format!("encoder stage {i}: nothing left to pool"));
                }
                s.h /= 2;
                s.w /= 2;
            }
        }
        if let Some(p) = self.projection {
            if p == 0 || p > MAX_DIM {
                return err("bad projection width".into());
            }
            add(s.c * p + p)?;
        }
        let embedding = self.embedding_dim();
        let mut s = Shape {
            c: embedding,
            h: 1,
            w: 1,
        };
        for (i, st) in self.decoder.iter().enumerate() {
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
                    if out.is_empty() || channels > MAX_DIM || height > MAX_DIM || width > MAX_DIM {
                        return err(format!("decoder stage {i}: bad dense shape"));
                    }
                    let n = s
                        .len()
                        .checked_mul(out.len())
                        .ok_or_else(|| AutoencoderError::Architecture("dense too large".into()))?;
                    add(n)?;
                    add(out.len())?;
                    s = out;
                }
                DecoderStage::Deconv {
                    channels,
                    kernel,
                    stride,
                } => {
                    if channels == 0 || channels > MAX_DIM || kernel == 0 || kernel > 15 {
                        return err(format!("decoder stage {i}: bad channels/kernel"));
                    }
                    if stride == 0 || stride > 8 {
                        return err(format!("decoder stage {i}: bad stride"));
                    }
                    let pad = deconv_padding(kernel);
                    let h = ((s.h - 1) * stride + kernel).checked_sub(2 * pad);
                    let w = ((s.w - 1) * stride + kernel).checked_sub(2 * pad);
                    let (Some(h), Some(w)) = (h, w) else {
                        return err(format!("decoder stage {i}: negative output size"));
                    };
                    if h == 0 || w == 0 || h > MAX_DIM || w > MAX_DIM {
                        return err(format!("decoder stage {i}: output size {h}x{w}"));
                    }
                    add(s.c * channels * kernel * kernel + channels)?;
                    s = Shape { c: channels, h, w };
                }
            }
        }
        if s != self.input_shape() {
            return err(format!(
                "decoder output {}x{}x{} does not match input {}x{}x{}",
                s.c, s.h, s.w, self.input_channels, self.input_size, self.input_size
            ));
        }
        Ok(params)
    }
}
