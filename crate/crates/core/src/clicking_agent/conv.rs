//! 3×3 zero-padded convolution with configurable stride, plus nearest
//! upsampling, over `C×H×W` buffers.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

pub(crate) fn conv_out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Output positions whose tap `k` lands inside an input axis of length `n_in`.
fn tap_range(k: usize, stride: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
    // input index is i·stride + k − 1
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if n_in + 1 > k { (n_in + 1 - k - 1) / stride + 1 } else { 0 };
    lo..hi.min(n_out).max(lo)
}

/// `weight` is `[out, in, 3, 3]` row-major.
pub(crate) fn conv3x3_forward<F: Scalar>(
    x: &[F],
    xs: Shape,
    weight: &[F],
    bias: &[F],
    out_c: usize,
    stride: usize,
) -> (Vec<F>, Shape) {
    let ys = Shape {
        c: out_c,
        h: conv_out_dim(xs.h, stride),
        w: conv_out_dim(xs.w, stride),
    };
    let mut y = vec![F::zero(); ys.len()];
    for o in 0..out_c {
        let yo = &mut y[o * ys.h * ys.w..(o + 1) * ys.h * ys.w];
        yo.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..xs.c {
            let xc = &x[c * xs.h * xs.w..(c + 1) * xs.h * xs.w];
            for ki in 0..3 {
                for kj in 0..3 {
                    let wv = weight[(o * xs.c + c) * 9 + ki * 3 + kj];
                    let cols = tap_range(kj, stride, xs.w, ys.w);
                    for i in tap_range(ki, stride, xs.h, ys.h) {
                        let xr = &xc[(i * stride + ki - 1) * xs.w..][..xs.w];
                        let yr = &mut yo[i * ys.w..(i + 1) * ys.w];
                        for j in cols.clone() {
                            yr[j] += wv * xr[j * stride + kj - 1];
                        }
                    }
                }
            }
        }
    }
    (y, ys)
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward<F: Scalar>(
    x: &[F],
    xs: Shape,
    weight: &[F],
    dy: &[F],
    ys: Shape,
    stride: usize,
    dw: &mut [F],
    db: &mut [F],
    want_dx: bool,
) -> Option<Vec<F>> {
    let mut dx = want_dx.then(|| vec![F::zero(); xs.len()]);
    for o in 0..ys.c {
        let dyo = &dy[o * ys.h * ys.w..(o + 1) * ys.h * ys.w];
        for &g in dyo {
            db[o] += g;
        }
        for c in 0..xs.c {
            let plane = c * xs.h * xs.w..(c + 1) * xs.h * xs.w;
            let xc = &x[plane.clone()];
            for ki in 0..3 {
                for kj in 0..3 {
                    let widx = (o * xs.c + c) * 9 + ki * 3 + kj;
                    let wv = weight[widx];
                    let cols = tap_range(kj, stride, xs.w, ys.w);
                    let mut acc = F::zero();
                    for i in tap_range(ki, stride, xs.h, ys.h) {
                        let row = (i * stride + ki - 1) * xs.w;
                        let gr = &dyo[i * ys.w..(i + 1) * ys.w];
                        for j in cols.clone() {
                            acc += gr[j] * xc[row + j * stride + kj - 1];
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dxr = &mut dx[plane.clone()][row..row + xs.w];
                            for j in cols.clone() {
                                dxr[j * stride + kj - 1] += gr[j] * wv;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour ×2 upsampling cropped to `h × w`.
pub(crate) fn upsample2<F: Scalar>(x: &[F], xs: Shape, h: usize, w: usize) -> (Vec<F>, Shape) {
    let ys = Shape { c: xs.c, h, w };
    let mut y = vec![F::zero(); ys.len()];
    for c in 0..xs.c {
        for i in 0..h {
            for j in 0..w {
                y[(c * h + i) * w + j] = x[(c * xs.h + i / 2) * xs.w + j / 2];
            }
        }
    }
    (y, ys)
}

pub(crate) fn upsample2_backward<F: Scalar>(dy: &[F], ys: Shape, xs: Shape) -> Vec<F> {
    let mut dx = vec![F::zero(); xs.len()];
    for c in 0..ys.c {
        for i in 0..ys.h {
            for j in 0..ys.w {
                dx[(c * xs.h + i / 2) * xs.w + j / 2] += dy[(c * ys.h + i) * ys.w + j];
            }
        }
    }
    dx
}
