//! Forward and backward kernels on flat row-major buffers.
//!
//! Shapes are passed as plain extents; callers in [`crate::graph`] have
//! already validated them.

use crate::tensor::{Mat, MatMut, Real};

/// Output-row range `[lo, hi)` such that `o + k - pad` stays inside `0..n`.
#[inline]
fn valid_range(n: usize, out: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (n + pad).saturating_sub(k).min(out);
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }
    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }
}

/// Upper bound on the im2col buffer, in elements; batches are processed in
/// chunks that fit.
const COLS_BUDGET: usize = 1 << 21;

fn chunk_len(d: &ConvDims) -> usize {
    let per_sample = d.in_channels * d.kernel * d.kernel * d.out_height() * d.out_width();
    (COLS_BUDGET / per_sample.max(1)).clamp(1, d.batch.max(1))
}

/// Unfolds samples `n0..n0+cn` into `cols`, a `[Cin·k·k, cn·OH·OW]` matrix.
fn im2col<T: Real>(x: &[T], d: &ConvDims, n0: usize, cn: usize, cols: &mut [T]) {
    let (oh, ow) = (d.out_height(), d.out_width());
    let (h, wd, k) = (d.height, d.width, d.kernel);
    let (plane, row_len) = (oh * ow, cn * oh * ow);
    cols.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..d.in_channels {
        for ky in 0..k {
            let (y0, y1) = valid_range(h, oh, ky, d.pad);
            for kx in 0..k {
                let (x0, x1) = valid_range(wd, ow, kx, d.pad);
                if x0 >= x1 {
                    continue;
                }
                let ix0 = x0 + kx - d.pad;
                let row = &mut cols[((ci * k + ky) * k + kx) * row_len..][..row_len];
                for j in 0..cn {
                    let src = &x[((n0 + j) * d.in_channels + ci) * h * wd..][..h * wd];
                    for oy in y0..y1 {
                        let iy = oy + ky - d.pad;
                        let dst = &mut row[j * plane + oy * ow + x0..][..x1 - x0];
                        dst.copy_from_slice(&src[iy * wd + ix0..][..x1 - x0]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back into `dx`.
fn col2im<T: Real>(cols: &[T], d: &ConvDims, n0: usize, cn: usize, dx: &mut [T]) {
    let (oh, ow) = (d.out_height(), d.out_width());
    let (h, wd, k) = (d.height, d.width, d.kernel);
    let (plane, row_len) = (oh * ow, cn * oh * ow);
    for ci in 0..d.in_channels {
        for ky in 0..k {
            let (y0, y1) = valid_range(h, oh, ky, d.pad);
            for kx in 0..k {
                let (x0, x1) = valid_range(wd, ow, kx, d.pad);
                if x0 >= x1 {
                    continue;
                }
                let ix0 = x0 + kx - d.pad;
                let row = &cols[((ci * k + ky) * k + kx) * row_len..][..row_len];
                for j in 0..cn {
                    let dst = &mut dx[((n0 + j) * d.in_channels + ci) * h * wd..][..h * wd];
                    for oy in y0..y1 {
                        let iy = oy + ky - d.pad;
                        let src = &row[j * plane + oy * ow + x0..][..x1 - x0];
                        for (o, &v) in dst[iy * wd + ix0..][..x1 - x0].iter_mut().zip(src) {
                            *o = *o + v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 cross-correlation with zero padding.
pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: &[T], d: ConvDims) -> Vec<T> {
    let plane = d.out_height() * d.out_width();
    let r = d.in_channels * d.kernel * d.kernel;
    let co = d.out_channels;
    let mut out = vec![T::zero(); d.batch * co * plane];
    let chunk = chunk_len(&d);
    let mut cols = vec![T::zero(); r * chunk * plane];
    let mut tmp = vec![T::zero(); co * chunk * plane];
    for n0 in (0..d.batch).step_by(chunk) {
        let cn = chunk.min(d.batch - n0);
        let cols = &mut cols[..r * cn * plane];
        im2col(x, &d, n0, cn, cols);
        let tmp = &mut tmp[..co * cn * plane];
        T::gemm(co, r, cn * plane, Mat::rows(w, r), Mat::rows(cols, cn * plane), T::zero(), MatMut::rows(tmp, cn * plane));
        for j in 0..cn {
            for c in 0..co {
                let dst = &mut out[((n0 + j) * co + c) * plane..][..plane];
                let src = &tmp[c * cn * plane + j * plane..][..plane];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = v + b[c];
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]; `dx` and `dw` are only computed when requested.
pub fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: ConvDims,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let plane = d.out_height() * d.out_width();
    let r = d.in_channels * d.kernel * d.kernel;
    let co = d.out_channels;
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); w.len()]);
    let mut db = vec![T::zero(); co];
    let chunk = chunk_len(&d);
    let mut cols = vec![T::zero(); r * chunk * plane];
    let mut dym = vec![T::zero(); co * chunk * plane];
    for n0 in (0..d.batch).step_by(chunk) {
        let cn = chunk.min(d.batch - n0);
        let len = cn * plane;
        let dym = &mut dym[..co * len];
        for j in 0..cn {
            for c in 0..co {
                let src = &dy[((n0 + j) * co + c) * plane..][..plane];
                db[c] = db[c] + src.iter().copied().sum::<T>();
                dym[c * len + j * plane..][..plane].copy_from_slice(src);
            }
        }
        let cols = &mut cols[..r * len];
        if let Some(dw) = dw.as_mut() {
            im2col(x, &d, n0, cn, cols);
            T::gemm(co, len, r, Mat::rows(dym, len), Mat::transposed(cols, len), T::one(), MatMut::rows(dw, r));
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(r, co, len, Mat::transposed(w, r), Mat::rows(dym, len), T::zero(), MatMut::rows(cols, len));
            col2im(cols, &d, n0, cn, dx);
        }
    }
    (dx, dw, db)
}

pub const POOL_KERNEL: usize = 3;
pub const POOL_STRIDE: usize = 2;
pub const POOL_PAD: usize = 1;

pub fn pooled_extent(n: usize) -> usize {
    (n + 2 * POOL_PAD - POOL_KERNEL) / POOL_STRIDE + 1
}

/// 3x3 / stride 2 / pad 1 average pooling with a fixed divisor of 9.
pub fn avgpool_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let inv = T::one() / T::of((POOL_KERNEL * POOL_KERNEL) as f64);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for ky in 0..POOL_KERNEL {
                    let iy = (oy * POOL_STRIDE + ky) as isize - POOL_PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..POOL_KERNEL {
                        let ix = (ox * POOL_STRIDE + kx) as isize - POOL_PAD as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        s = s + src[iy as usize * w + ix as usize];
                    }
                }
                dst[oy * ow + ox] = s * inv;
            }
        }
    }
    out
}

pub fn avgpool_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let inv = T::one() / T::of((POOL_KERNEL * POOL_KERNEL) as f64);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..][..oh * ow];
        let dst = &mut dx[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[oy * ow + ox] * inv;
                for ky in 0..POOL_KERNEL {
                    let iy = (oy * POOL_STRIDE + ky) as isize - POOL_PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..POOL_KERNEL {
                        let ix = (ox * POOL_STRIDE + kx) as isize - POOL_PAD as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        dst[i] = dst[i] + gv;
                    }
                }
            }
        }
    }
    dx
}

/// Per-plane statistics saved by [`instance_norm_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct NormSaved<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn instance_norm_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    eps: T,
) -> (Vec<T>, NormSaved<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); batch * channels];
    let inv_n = T::one() / T::of(plane as f64);
    for n in 0..batch {
        for c in 0..channels {
            let idx = n * channels + c;
            let src = &x[idx * plane..][..plane];
            let mean = src.iter().copied().sum::<T>() * inv_n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[idx] = is;
            let xh = &mut normalized[idx * plane..][..plane];
            let dst = &mut out[idx * plane..][..plane];
            for ((h, o), &v) in xh.iter_mut().zip(dst.iter_mut()).zip(src) {
                *h = (v - mean) * is;
                *o = gamma[c] * *h + beta[c];
            }
        }
    }
    (out, NormSaved { normalized, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn instance_norm_backward<T: Real>(
    dy: &[T],
    gamma: &[T],
    saved: &NormSaved<T>,
    batch: usize,
    channels: usize,
    plane: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    let inv_n = T::one() / T::of(plane as f64);
    for n in 0..batch {
        for c in 0..channels {
            let idx = n * channels + c;
            let g = &dy[idx * plane..][..plane];
            let xh = &saved.normalized[idx * plane..][..plane];
            let sum_g = g.iter().copied().sum::<T>();
            let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            dgamma[c] = dgamma[c] + sum_gx;
            dbeta[c] = dbeta[c] + sum_g;
            let mean_g = sum_g * gamma[c] * inv_n;
            let mean_gx = sum_gx * gamma[c] * inv_n;
            let scale = saved.inv_std[idx];
            let dst = &mut dx[idx * plane..][..plane];
            for ((o, &gv), &h) in dst.iter_mut().zip(g).zip(xh) {
                *o = scale * (gv * gamma[c] - mean_g - h * mean_gx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// `x[N,D] · w[K,D]ᵀ + b[K]`.
pub fn linear_forward<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, d: usize, k: usize) -> Vec<T> {
    let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
    T::gemm(n, d, k, Mat::rows(x, d), Mat::transposed(w, d), T::one(), MatMut::rows(&mut out, k));
    out
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    d: usize,
    k: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n * d];
    let mut dw = vec![T::zero(); k * d];
    let mut db = vec![T::zero(); k];
    T::gemm(n, k, d, Mat::rows(dy, k), Mat::rows(w, d), T::zero(), MatMut::rows(&mut dx, d));
    T::gemm(k, n, d, Mat::transposed(dy, k), Mat::rows(x, d), T::zero(), MatMut::rows(&mut dw, d));
    for row in dy.chunks(k) {
        for (o, &g) in db.iter_mut().zip(row) {
            *o = *o + g;
        }
    }
    (dx, dw, db)
}

/// Channel sum of `|x|^p`: `[B,C,S] -> [B,S]`.
pub fn attention_pool_forward<T: Real>(x: &[T], batch: usize, channels: usize, spatial: usize, p: T) -> Vec<T> {
    let mut out = vec![T::zero(); batch * spatial];
    for b in 0..batch {
        let dst = &mut out[b * spatial..][..spatial];
        for c in 0..channels {
            let src = &x[(b * channels + c) * spatial..][..spatial];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = *o + v.abs().powf(p);
            }
        }
    }
    out
}

pub fn attention_pool_backward<T: Real>(
    x: &[T],
    dy: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
    p: T,
) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    let pm1 = p - T::one();
    for b in 0..batch {
        let g = &dy[b * spatial..][..spatial];
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            for s in 0..spatial {
                let v = x[off + s];
                if v != T::zero() {
                    dx[off + s] = g[s] * p * v.signum() * v.abs().powf(pm1);
                }
            }
        }
    }
    dx
}
