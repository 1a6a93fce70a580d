//! Dense kernels on `f32` buffers: strided GEMM, im2col/col2im and the
//! small elementwise pieces the networks need.
//!
//! Activations of convolutional stages are laid out `[C, B, H, W]` so that a
//! convolution is a single GEMM over the whole mini-batch.

/// `C = alpha * op(A) op(B) + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too small");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too small");
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too small");
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Row-major `[rows, cols]` strides.
#[inline]
pub fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

/// Strides of the transpose of a row-major `[rows, cols]` matrix.
#[inline]
pub fn tr(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }

    /// Source pixel of output `(oy, ox)` under kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        (y >= 0 && x >= 0 && (y as usize) < self.in_h && (x as usize) < self.in_w).then_some((y as usize, x as usize))
    }
}

/// `[C, B, H, W]` -> `[C*k*k, B*Ho*Wo]`
pub fn im2col(input: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let ncols = g.col_cols();
    let mut cols = vec![0.0f32; g.col_rows() * ncols];
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &input[(c * g.batch + b) * plane..(c * g.batch + b + 1) * plane];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                                dst[(b * ho + oy) * wo + ox] = src[y * g.in_w + x];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back to `[C, B, H, W]`.
pub fn col2im(cols: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let ncols = g.col_cols();
    let plane = g.in_h * g.in_w;
    let mut out = vec![0.0f32; g.channels * g.batch * plane];
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut out[(c * g.batch + b) * plane..(c * g.batch + b + 1) * plane];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                                dst[y * g.in_w + x] += src[(b * ho + oy) * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn relu_in_place(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the (post-ReLU) activation is zero.
pub fn relu_backward(grad: &mut [f32], activation: &[f32]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[C, B, P]` -> `[C*P, B]` (per-sample flatten in `(c, p)` order).
pub fn cbp_to_features(a: &[f32], c: usize, b: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; a.len()];
    for ci in 0..c {
        for bi in 0..b {
            for pi in 0..p {
                out[(ci * p + pi) * b + bi] = a[(ci * b + bi) * p + pi];
            }
        }
    }
    out
}

/// Inverse of [`cbp_to_features`].
pub fn features_to_cbp(f: &[f32], c: usize, b: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; f.len()];
    for ci in 0..c {
        for bi in 0..b {
            for pi in 0..p {
                out[(ci * b + bi) * p + pi] = f[(ci * p + pi) * b + bi];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..8).map(|i| (i as f32).sin()).collect();
        let mut c = vec![1.0f32; 6];
        gemm(m, k, n, 1.0, &a, rm(k), &b, rm(n), 0.0, &mut c, rm(n));
        for i in 0..m {
            for j in 0..n {
                let s: f32 = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
                assert!((c[i * n + j] - s).abs() < 1e-5);
            }
        }
        // A^T B with A stored [k, m]
        let mut ct = vec![0.0f32; 4 * 2];
        gemm(4, 3, 2, 1.0, &a, tr(4), &b[..6], rm(2), 0.0, &mut ct, rm(2));
        let s: f32 = (0..3).map(|l| a[l * 4 + 1] * b[l * 2]).sum();
        assert!((ct[2] - s).abs() < 1e-5);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry {
            channels: 2,
            batch: 3,
            in_h: 6,
            in_w: 6,
            kernel: 4,
            stride: 2,
            pad: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (3, 3));
        let x: Vec<f32> = (0..2 * 3 * 36).map(|i| ((i * 7 % 13) as f32) - 6.0).collect();
        let y: Vec<f32> = (0..g.col_rows() * g.col_cols()).map(|i| ((i * 5 % 11) as f32) - 5.0).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, &g)).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-6);
    }

    #[test]
    fn flatten_round_trip() {
        let a: Vec<f32> = (0..24).map(|i| i as f32).collect();
        assert_eq!(features_to_cbp(&cbp_to_features(&a, 2, 3, 4), 2, 3, 4), a);
    }
}
