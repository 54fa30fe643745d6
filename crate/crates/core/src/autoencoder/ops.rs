//! Dense kernels: GEMM, im2col/col2im and 2x2 max pooling, all channel-major.

/// `c = alpha * op(a) * op(b) + beta * c` with row-major operands.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index the kernel touches:
    // a is read at i*rsa + l*csa < m*k, b at l*rsb + j*csb < k*n, c at i*n + j < m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one sliding-kernel pass over a `c x h x w` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Patch {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        }
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `x` into a `(c*k*k) x (out_h*out_w)` matrix; out-of-bounds taps are zero.
pub fn im2col(x: &[f64], p: &Patch, cols: &mut [f64]) {
    let n = p.cols();
    for ci in 0..p.c {
        let plane = &x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ki in 0..p.k {
            for kj in 0..p.k {
                let row = (ci * p.k + ki) * p.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..p.out_h {
                    let y = (oy * p.stride + ki) as isize - p.pad as isize;
                    let line = &mut dst[oy * p.out_w..(oy + 1) * p.out_w];
                    if y < 0 || y >= p.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * p.w..(y as usize + 1) * p.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let xx = (ox * p.stride + kj) as isize - p.pad as isize;
                        *v = if xx < 0 || xx >= p.w as isize {
                            0.0
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `x` (which is not cleared).
pub fn col2im(cols: &[f64], p: &Patch, x: &mut [f64]) {
    let n = p.cols();
    for ci in 0..p.c {
        let plane = &mut x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ki in 0..p.k {
            for kj in 0..p.k {
                let row = (ci * p.k + ki) * p.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..p.out_h {
                    let y = (oy * p.stride + ki) as isize - p.pad as isize;
                    if y < 0 || y >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * p.w..(y as usize + 1) * p.w];
                    for ox in 0..p.out_w {
                        let xx = (ox * p.stride + kj) as isize - p.pad as isize;
                        if xx >= 0 && (xx as usize) < p.w {
                            dst[xx as usize] += src[oy * p.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pooling. `argmax` receives the flat input index of each winner;
/// ties go to the first element in row-major order.
pub fn max_pool2(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = ci * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if best == usize::MAX || x[i] > best_v {
                            best = i;
                            best_v = x[i];
                        }
                    }
                }
                let o = ci * oh * ow + oy * ow + ox;
                out[o] = best_v;
                argmax[o] = best;
            }
        }
    }
}
