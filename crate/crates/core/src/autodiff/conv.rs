//! im2col-based 2-D convolution kernels (NCHW, square kernels).

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    /// Conv output size for an `h×w` input, or `None` if the kernel does not fit.
    pub fn conv(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let ho = (h + 2 * pad).checked_sub(k)? / stride + 1;
        let wo = (w + 2 * pad).checked_sub(k)? / stride + 1;
        Some(Self { c, h, w, k, stride, pad, ho, wo })
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output indices `o` with `0 <= o·stride + k - pad < len`.
    fn valid(&self, k: usize, out: usize, len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        let hi = if len + self.pad > k { ((len + self.pad - k - 1) / s + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Calls `f(x0, c0, n)` for every kernel tap and output row: col entry
    /// `c0 + j` covers input `x0 + j·stride` for `j < n`.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.k;
        let cols = self.col_cols();
        for c in 0..self.c {
            for ki in 0..k {
                let (ilo, ihi) = self.valid(ki, self.ho, self.h);
                for kj in 0..k {
                    let (jlo, jhi) = self.valid(kj, self.wo, self.w);
                    if jlo == jhi {
                        continue;
                    }
                    let row = (c * k + ki) * k + kj;
                    for oi in ilo..ihi {
                        let ii = oi * self.stride + ki - self.pad;
                        let x0 = (c * self.h + ii) * self.w + jlo * self.stride + kj - self.pad;
                        f(x0, row * cols + oi * self.wo + jlo, jhi - jlo);
                    }
                }
            }
        }
    }

    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut col = vec![0.0; self.col_rows() * self.col_cols()];
        let s = self.stride;
        self.for_each_row(|x0, c0, n| {
            for (d, v) in col[c0..c0 + n].iter_mut().zip(x[x0..].iter().step_by(s)) {
                *d = *v;
            }
        });
        col
    }

    /// Adjoint of `im2col`: accumulates into `x`.
    pub fn col2im(&self, col: &[f64], x: &mut [f64]) {
        let s = self.stride;
        self.for_each_row(|x0, c0, n| {
            for (d, v) in x[x0..].iter_mut().step_by(s).zip(&col[c0..c0 + n]) {
                *d += v;
            }
        });
    }
}

/// Forward conv of one image: `w` is `[o, c·k·k]`, returns `[o, ho·wo]`.
pub(crate) fn conv_forward(g: &Geometry, o: usize, x: &[f64], w: &[f64]) -> Vec<f64> {
    let col = g.im2col(x);
    let (kk, n) = (g.col_rows(), g.col_cols());
    let mut out = vec![0.0; o * n];
    gemm(o, kk, n, w, (kk as isize, 1), &col, (n as isize, 1), 0.0, &mut out, (n as isize, 1));
    out
}

/// Backward conv of one image; accumulates into `dx` and `dw`.
pub(crate) fn conv_backward(g: &Geometry, o: usize, x: &[f64], w: &[f64], dy: &[f64], dx: Option<&mut [f64]>, dw: Option<&mut [f64]>) {
    let (kk, n) = (g.col_rows(), g.col_cols());
    if let Some(dw) = dw {
        let col = g.im2col(x);
        // dw[o, kk] += dy[o, n] · colᵀ
        gemm(o, n, kk, dy, (n as isize, 1), &col, (1, n as isize), 1.0, dw, (kk as isize, 1));
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; kk * n];
        // dcol[kk, n] = wᵀ · dy
        gemm(kk, o, n, w, (1, kk as isize), dy, (n as isize, 1), 0.0, &mut dcol, (n as isize, 1));
        g.col2im(&dcol, dx);
    }
}

/// Transposed conv of one image. `g` is the geometry of the matching forward
/// conv (its input is our output); `w` is `[c_in, o·k·k]` where `o = g.c`.
pub(crate) fn deconv_forward(g: &Geometry, c_in: usize, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (kk, n) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; kk * n];
    // col[kk, n] = wᵀ · x[c_in, n]
    gemm(kk, c_in, n, w, (1, kk as isize), x, (n as isize, 1), 0.0, &mut col, (n as isize, 1));
    let mut out = vec![0.0; g.c * g.h * g.w];
    g.col2im(&col, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv_backward(
    g: &Geometry,
    c_in: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let (kk, n) = (g.col_rows(), g.col_cols());
    let dcol = g.im2col(dy);
    if let Some(dx) = dx {
        // dx[c_in, n] += w[c_in, kk] · dcol[kk, n]
        gemm(c_in, kk, n, w, (kk as isize, 1), &dcol, (n as isize, 1), 1.0, dx, (n as isize, 1));
    }
    if let Some(dw) = dw {
        // dw[c_in, kk] += x[c_in, n] · dcolᵀ
        gemm(c_in, n, kk, x, (n as isize, 1), &dcol, (1, n as isize), 1.0, dw, (kk as isize, 1));
    }
}
