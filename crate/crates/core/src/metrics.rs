//! Pixel-level image quality metrics: SSIM (11x11 Gaussian window,
//! sigma 1.5, K1 = 0.01, K2 = 0.03, unit dynamic range) and PSNR.

use crate::error::{PcError, Result};
use crate::tensor::Real;
use ndarray::{Array2, Array3};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Identical frames report +inf; CSV emitters cap at this sentinel.
pub const PSNR_CAP_DB: f64 = 100.0;

fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let c = (WINDOW as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

fn check_pair<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(PcError::Shape(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Valid-mode separable Gaussian filtering of one channel plane.
fn gauss_valid(x: &Array2<f64>, taps: &[f64; WINDOW]) -> Array2<f64> {
    let (h, w) = x.dim();
    let ho = h - WINDOW + 1;
    let wo = w - WINDOW + 1;
    let mut rows = Array2::<f64>::zeros((ho, w));
    for oy in 0..ho {
        for ox in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * x[(oy + k, ox)];
            }
            rows[(oy, ox)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((ho, wo));
    for oy in 0..ho {
        for ox in 0..wo {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * rows[(oy, ox + k)];
            }
            out[(oy, ox)] = acc;
        }
    }
    out
}

/// Mean local SSIM over all valid 11x11 windows, averaged across channels.
/// Values are expected in [0, 1] (unit dynamic range).
pub fn ssim<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (c_n, h, w) = a.dim();
    if h < WINDOW || w < WINDOW {
        return Err(PcError::InvalidArgument(format!(
            "ssim needs at least {0}x{0} images, got {1}x{2}",
            WINDOW, h, w
        )));
    }
    let taps = gaussian_taps();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..c_n {
        let xa = Array2::from_shape_fn((h, w), |(i, j)| a[(c, i, j)].to_f64());
        let xb = Array2::from_shape_fn((h, w), |(i, j)| b[(c, i, j)].to_f64());
        let mu_a = gauss_valid(&xa, &taps);
        let mu_b = gauss_valid(&xb, &taps);
        let aa = gauss_valid(&(&xa * &xa), &taps);
        let bb = gauss_valid(&(&xb * &xb), &taps);
        let ab = gauss_valid(&(&xa * &xb), &taps);
        for ((i, j), &ma) in mu_a.indexed_iter() {
            let mb = mu_b[(i, j)];
            let va = aa[(i, j)] - ma * ma;
            let vb = bb[(i, j)] - mb * mb;
            let cov = ab[(i, j)] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean squared error over all elements.
pub fn mse<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// `10 log10(1 / MSE)` for unit dynamic range; identical inputs give +inf.
pub fn psnr<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / m).log10())
    }
}

/// PSNR with the +inf sentinel capped for CSV output.
pub fn psnr_capped<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Result<f64> {
    Ok(psnr(a, b)?.min(PSNR_CAP_DB))
}
