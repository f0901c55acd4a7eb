//! Array-level kernels behind the graph ops: im2col-based dense convolution,
//! direct depthwise convolution, resampling primitives, and the per-position
//! channel normalization used by the perceptual distance.

use super::Real;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};

pub(crate) fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold (C, H, W) into a (C*kh*kw, Ho*Wo) matrix; out-of-range taps are 0.
pub(crate) fn im2col<T: Real>(
    x: &ArrayView3<'_, T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (c_in, h, w) = x.dim();
    let ho = out_dim(h, kh, stride, pad);
    let wo = out_dim(w, kw, stride, pad);
    let mut col = Array2::<T>::zeros((c_in * kh * kw, ho * wo));
    let col_s = col.as_slice_mut().expect("col is contiguous");
    let xs = x.as_slice().expect("node values are standard layout");
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                let row = &mut col_s[r * ho * wo..(r + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &xs[(c * h + iy as usize) * w..(c * h + iy as usize) * w + w];
                    let out_row = &mut row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad).saturating_sub(kx).min(wo);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kx - pad;
                            out_row[ox_lo..ox_hi]
                                .copy_from_slice(&x_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                        }
                    } else {
                        for (ox, slot) in out_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *slot = x_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a column-gradient matrix back onto the input grid (scatter-add).
pub(crate) fn col2im<T: Real>(
    dcol: &Array2<T>,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let ho = out_dim(h, kh, stride, pad);
    let wo = out_dim(w, kw, stride, pad);
    let mut dx = Array3::<T>::zeros((c_in, h, w));
    let dxs = dx.as_slice_mut().expect("dx is contiguous");
    let dcol_s = dcol.as_slice().expect("dcol is contiguous");
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                let row = &dcol_s[r * ho * wo..(r + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dx_row =
                        &mut dxs[(c * h + iy as usize) * w..(c * h + iy as usize) * w + w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad).saturating_sub(kx).min(wo);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kx - pad;
                            for (d, g) in dx_row[ix_lo..ix_lo + (ox_hi - ox_lo)]
                                .iter_mut()
                                .zip(src[ox_lo..ox_hi].iter())
                            {
                                *d += *g;
                            }
                        }
                    } else {
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dx_row[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Dense convolution (cross-correlation): weight (Co, Ci, kh, kw).
/// Returns the output and the unfolded input for the backward pass.
pub(crate) fn conv2d_forward<T: Real>(
    x: &ArrayView3<'_, T>,
    weight: &ArrayView4<'_, T>,
    bias: Option<&ArrayView1<'_, T>>,
    stride: usize,
    pad: usize,
) -> (Array3<T>, Array2<T>) {
    let (c_out, c_in, kh, kw) = weight.dim();
    debug_assert_eq!(c_in, x.dim().0);
    let (_, h, w) = x.dim();
    let ho = out_dim(h, kh, stride, pad);
    let wo = out_dim(w, kw, stride, pad);
    let col = im2col(x, kh, kw, stride, pad);
    let wmat = weight
        .to_shape((c_out, c_in * kh * kw))
        .expect("weight is contiguous");
    let mut out = wmat.dot(&col);
    if let Some(b) = bias {
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    let out = out
        .into_shape_with_order((c_out, ho, wo))
        .expect("gemm output is contiguous");
    (out, col)
}

/// Gradients of the dense convolution. `col` is the cached unfolded input.
pub(crate) fn conv2d_backward<T: Real>(
    dout: &ArrayView3<'_, T>,
    weight: &ArrayView4<'_, T>,
    col: &Array2<T>,
    x_dim: (usize, usize, usize),
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Array3<T>>, Option<Array4<T>>, Option<Array1<T>>) {
    let (c_out, c_in, kh, kw) = weight.dim();
    let (_, h, w) = x_dim;
    let ho = out_dim(h, kh, stride, pad);
    let wo = out_dim(w, kw, stride, pad);
    let dout_mat = dout
        .to_shape((c_out, ho * wo))
        .expect("dout is contiguous");
    let dw = if need_dw {
        let dwm = dout_mat.dot(&col.t());
        Some(
            dwm.into_shape_with_order((c_out, c_in, kh, kw))
                .expect("dw shape"),
        )
    } else {
        None
    };
    let db = if need_db {
        Some(dout_mat.sum_axis(Axis(1)))
    } else {
        None
    };
    let dx = if need_dx {
        let wmat = weight
            .to_shape((c_out, c_in * kh * kw))
            .expect("weight is contiguous");
        let dcol = wmat.t().dot(&dout_mat);
        Some(col2im(&dcol, c_in, h, w, kh, kw, stride, pad))
    } else {
        None
    };
    (dx, dw, db)
}

/// Depthwise convolution: weight (C, kh, kw), channel c filters channel c only.
pub(crate) fn depthwise_forward<T: Real>(
    x: &ArrayView3<'_, T>,
    weight: &ArrayView3<'_, T>,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (c_n, h, w) = x.dim();
    let (_, kh, kw) = weight.dim();
    let ho = out_dim(h, kh, stride, pad);
    let wo = out_dim(w, kw, stride, pad);
    let mut out = Array3::<T>::zeros((c_n, ho, wo));
    let os = out.as_slice_mut().expect("out is contiguous");
    let xs = x.as_slice().expect("x is standard layout");
    let ws = weight.as_slice().expect("weight is standard layout");
    for c in 0..c_n {
        for oy in 0..ho {
            let orow = &mut os[(c * ho + oy) * wo..(c * ho + oy + 1) * wo];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let xrow = &xs[(c * h + iy as usize) * w..(c * h + iy as usize) * w + w];
                for kx in 0..kw {
                    let wv = ws[(c * kh + ky) * kw + kx];
                    if stride == 1 {
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad).saturating_sub(kx).min(wo);
                        let ix_lo = ox_lo + kx - pad;
                        for (o, &xv) in orow[ox_lo..ox_hi]
                            .iter_mut()
                            .zip(xrow[ix_lo..ix_lo + ox_hi.saturating_sub(ox_lo)].iter())
                        {
                            *o += wv * xv;
                        }
                    } else {
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the depthwise convolution.
pub(crate) fn depthwise_backward<T: Real>(
    dout: &ArrayView3<'_, T>,
    x: &ArrayView3<'_, T>,
    weight: &ArrayView3<'_, T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Array3<T>>, Option<Array3<T>>) {
    let (c_n, h, w) = x.dim();
    let (_, kh, kw) = weight.dim();
    let (_, ho, wo) = dout.dim();
    let dout_s = dout.as_slice().expect("dout is contiguous");
    let xs = x.as_slice().expect("x is standard layout");
    let ws = weight.as_slice().expect("weight is standard layout");
    let mut dx = Array3::<T>::zeros((c_n, h, w));
    let mut dw = Array3::<T>::zeros((c_n, kh, kw));
    let dxs = dx.as_slice_mut().expect("dx is contiguous");
    let dws = dw.as_slice_mut().expect("dw is contiguous");
    for c in 0..c_n {
        for oy in 0..ho {
            let grow = &dout_s[(c * ho + oy) * wo..(c * ho + oy + 1) * wo];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let iy = iy as usize;
                let row0 = (c * h + iy) * w;
                for kx in 0..kw {
                    let wv = ws[(c * kh + ky) * kw + kx];
                    if stride == 1 {
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad).saturating_sub(kx).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let ix_lo = ox_lo + kx - pad;
                        let n = ox_hi - ox_lo;
                        let gseg = &grow[ox_lo..ox_hi];
                        if need_dw {
                            let xseg = &xs[row0 + ix_lo..row0 + ix_lo + n];
                            let mut acc = T::zero();
                            for (g, xv) in gseg.iter().zip(xseg.iter()) {
                                acc += *g * *xv;
                            }
                            dws[(c * kh + ky) * kw + kx] += acc;
                        }
                        if need_dx {
                            let dseg = &mut dxs[row0 + ix_lo..row0 + ix_lo + n];
                            for (d, g) in dseg.iter_mut().zip(gseg.iter()) {
                                *d += wv * *g;
                            }
                        }
                    } else {
                        let mut acc = T::zero();
                        for (ox, &g) in grow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            acc += g * xs[row0 + ix];
                            if need_dx {
                                dxs[row0 + ix] += wv * g;
                            }
                        }
                        if need_dw {
                            dws[(c * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    (need_dx.then_some(dx), need_dw.then_some(dw))
}

/// Place input sample (i, j) at output (2i+1, 2j+1); all other outputs 0.
pub(crate) fn zero_interleave2<T: Real>(x: &ArrayView3<'_, T>) -> Array3<T> {
    let (c_n, h, w) = x.dim();
    let xs = x.as_slice().expect("x is standard layout");
    let mut out = Array3::<T>::zeros((c_n, 2 * h, 2 * w));
    let os = out.as_slice_mut().expect("out is contiguous");
    for c in 0..c_n {
        for i in 0..h {
            let src = &xs[(c * h + i) * w..(c * h + i + 1) * w];
            let dst0 = (c * 2 * h + 2 * i + 1) * 2 * w + 1;
            for (j, &v) in src.iter().enumerate() {
                os[dst0 + 2 * j] = v;
            }
        }
    }
    out
}

pub(crate) fn zero_interleave2_backward<T: Real>(dout: &ArrayView3<'_, T>) -> Array3<T> {
    let (c_n, h2, w2) = dout.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let gs = dout.as_slice().expect("dout is contiguous");
    let mut dx = Array3::<T>::zeros((c_n, h, w));
    let ds = dx.as_slice_mut().expect("dx is contiguous");
    for c in 0..c_n {
        for i in 0..h {
            let src0 = (c * h2 + 2 * i + 1) * w2 + 1;
            let dst = &mut ds[(c * h + i) * w..(c * h + i + 1) * w];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = gs[src0 + 2 * j];
            }
        }
    }
    dx
}

/// Keep the even-phase samples: out(i, j) = in(2i, 2j).
pub(crate) fn subsample2<T: Real>(x: &ArrayView3<'_, T>) -> Array3<T> {
    let (c_n, h, w) = x.dim();
    let xs = x.as_slice().expect("x is standard layout");
    let mut out = Array3::<T>::zeros((c_n, h / 2, w / 2));
    let os = out.as_slice_mut().expect("out is contiguous");
    let (ho, wo) = (h / 2, w / 2);
    for c in 0..c_n {
        for i in 0..ho {
            let src0 = (c * h + 2 * i) * w;
            let dst = &mut os[(c * ho + i) * wo..(c * ho + i + 1) * wo];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = xs[src0 + 2 * j];
            }
        }
    }
    out
}

pub(crate) fn subsample2_backward<T: Real>(
    dout: &ArrayView3<'_, T>,
    h: usize,
    w: usize,
) -> Array3<T> {
    let (c_n, ho, wo) = dout.dim();
    let gs = dout.as_slice().expect("dout is contiguous");
    let mut dx = Array3::<T>::zeros((c_n, h, w));
    let ds = dx.as_slice_mut().expect("dx is contiguous");
    for c in 0..c_n {
        for i in 0..ho {
            let src = &gs[(c * ho + i) * wo..(c * ho + i + 1) * wo];
            let dst0 = (c * h + 2 * i) * w;
            for (j, &g) in src.iter().enumerate() {
                ds[dst0 + 2 * j] = g;
            }
        }
    }
    dx
}

fn bilinear_taps(o: usize, n: usize) -> (usize, usize, f64) {
    // Source coordinate for 2x upsampling, half-pixel centers.
    let s = (o as f64 + 0.5) / 2.0 - 0.5;
    let y0 = s.floor() as isize;
    let frac = s - y0 as f64;
    let lo = y0.clamp(0, n as isize - 1) as usize;
    let hi = (y0 + 1).clamp(0, n as isize - 1) as usize;
    (lo, hi, frac)
}

/// Bilinear 2x upsampling (half-pixel centers, clamped borders).
pub(crate) fn bilinear_up2<T: Real>(x: &ArrayView3<'_, T>) -> Array3<T> {
    let (c_n, h, w) = x.dim();
    let mut out = Array3::<T>::zeros((c_n, 2 * h, 2 * w));
    for oy in 0..2 * h {
        let (y0, y1, fy) = bilinear_taps(oy, h);
        for ox in 0..2 * w {
            let (x0, x1, fx) = bilinear_taps(ox, w);
            let (wy1, wx1) = (T::cast(fy), T::cast(fx));
            let (wy0, wx0) = (T::one() - wy1, T::one() - wx1);
            for c in 0..c_n {
                out[(c, oy, ox)] = wy0 * (wx0 * x[(c, y0, x0)] + wx1 * x[(c, y0, x1)])
                    + wy1 * (wx0 * x[(c, y1, x0)] + wx1 * x[(c, y1, x1)]);
            }
        }
    }
    out
}

pub(crate) fn bilinear_up2_backward<T: Real>(
    dout: &ArrayView3<'_, T>,
    h: usize,
    w: usize,
) -> Array3<T> {
    let (c_n, ho, wo) = dout.dim();
    let mut dx = Array3::<T>::zeros((c_n, h, w));
    for oy in 0..ho {
        let (y0, y1, fy) = bilinear_taps(oy, h);
        for ox in 0..wo {
            let (x0, x1, fx) = bilinear_taps(ox, w);
            let (wy1, wx1) = (T::cast(fy), T::cast(fx));
            let (wy0, wx0) = (T::one() - wy1, T::one() - wx1);
            for c in 0..c_n {
                let g = dout[(c, oy, ox)];
                dx[(c, y0, x0)] += wy0 * wx0 * g;
                dx[(c, y0, x1)] += wy0 * wx1 * g;
                dx[(c, y1, x0)] += wy1 * wx0 * g;
                dx[(c, y1, x1)] += wy1 * wx1 * g;
            }
        }
    }
    dx
}

/// Per-position unit normalization across channels:
/// y(c, p) = x(c, p) / sqrt(sum_c x(c, p)^2 + eps).
pub(crate) fn channel_unit_norm<T: Real>(x: &ArrayView3<'_, T>, eps: T) -> Array3<T> {
    let (c_n, h, w) = x.dim();
    let mut out = Array3::<T>::zeros((c_n, h, w));
    for i in 0..h {
        for j in 0..w {
            let mut ss = eps;
            for c in 0..c_n {
                ss += x[(c, i, j)] * x[(c, i, j)];
            }
            let s = ss.sqrt();
            for c in 0..c_n {
                out[(c, i, j)] = x[(c, i, j)] / s;
            }
        }
    }
    out
}

pub(crate) fn channel_unit_norm_backward<T: Real>(
    dout: &ArrayView3<'_, T>,
    x: &ArrayView3<'_, T>,
    eps: T,
) -> Array3<T> {
    let (c_n, h, w) = x.dim();
    let mut dx = Array3::<T>::zeros((c_n, h, w));
    for i in 0..h {
        for j in 0..w {
            let mut ss = eps;
            let mut dot = T::zero();
            for c in 0..c_n {
                ss += x[(c, i, j)] * x[(c, i, j)];
                dot += dout[(c, i, j)] * x[(c, i, j)];
            }
            let s = ss.sqrt();
            let s3 = s * s * s;
            for c in 0..c_n {
                dx[(c, i, j)] = dout[(c, i, j)] / s - x[(c, i, j)] * dot / s3;
            }
        }
    }
    dx
}
