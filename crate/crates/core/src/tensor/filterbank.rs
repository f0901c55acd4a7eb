//! Hamming-windowed sinc low-pass taps and their derivative in the cutoff
//! ratio. Shared by the public filter-design API and the autodiff op that
//! turns per-channel cutoff parameters into depthwise kernels.

use super::Real;
use crate::error::{PcError, Result};
use ndarray::Array1;

/// Hamming window `w(n) = 0.54 - 0.46 cos(2 pi n / N)` for `0 <= n <= N-1`.
///
/// The denominator is `N`, not `N - 1`, so the window is slightly
/// asymmetric about the sinc center `0.5 (N - 1)`.
pub fn hamming<T: Real>(n_len: usize) -> Result<Array1<T>> {
    if n_len == 0 {
        return Err(PcError::InvalidArgument(
            "hamming window length must be >= 1".into(),
        ));
    }
    let two_pi = std::f64::consts::PI * 2.0;
    Ok(Array1::from_iter((0..n_len).map(|n| {
        T::cast(0.54 - 0.46 * (two_pi * n as f64 / n_len as f64).cos())
    })))
}

/// Normalized sinc: `sinc(0) = 1`, `sinc(x) = sin(pi x) / (pi x)`.
pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        let px2 = (std::f64::consts::PI * x).powi(2);
        1.0 - px2 / 6.0 + px2 * px2 / 120.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// d/dx of normalized sinc.
pub(crate) fn sinc_deriv(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        let pi = std::f64::consts::PI;
        -pi * pi * x / 3.0 + pi.powi(4) * x.powi(3) / 30.0
    } else {
        let px = std::f64::consts::PI * x;
        (px.cos() - sinc(x)) / x
    }
}

/// Ideal-response coefficients `lambda(n) = rho sinc(rho (n - 0.5 (N-1)))`
/// where `rho = 2 fc / fs` is the cutoff ratio.
pub fn windowed_sinc<T: Real>(ratio: f64, n_len: usize) -> Result<Array1<T>> {
    check_ratio(ratio)?;
    if n_len == 0 {
        return Err(PcError::InvalidArgument("filter length must be >= 1".into()));
    }
    let center = 0.5 * (n_len as f64 - 1.0);
    Ok(Array1::from_iter(
        (0..n_len).map(|n| T::cast(ratio * sinc(ratio * (n as f64 - center)))),
    ))
}

/// Unit-DC-gain low-pass taps: `h(n) = lambda(n) w(n)` divided by its sum.
pub fn lowpass_taps<T: Real>(ratio: f64, n_len: usize) -> Result<Array1<T>> {
    let (taps, _) = taps_f64(ratio, n_len)?;
    Ok(Array1::from_iter(taps.iter().map(|&v| T::cast(v))))
}

/// Taps plus their derivative with respect to the cutoff ratio, both in f64.
/// Used by the autodiff op; the derivative accounts for the normalization.
pub(crate) fn taps_and_dtaps(ratio: f64, n_len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (taps, dtaps) = taps_f64(ratio, n_len)?;
    Ok((taps, dtaps))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0) {
        return Err(PcError::InvalidArgument(format!(
            "cutoff ratio must be positive, got {}",
            ratio
        )));
    }
    if ratio > 1.0 {
        return Err(PcError::InvalidArgument(format!(
            "cutoff ratio must not exceed 1, got {}",
            ratio
        )));
    }
    Ok(())
}

fn taps_f64(ratio: f64, n_len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_ratio(ratio)?;
    if n_len == 0 {
        return Err(PcError::InvalidArgument("filter length must be >= 1".into()));
    }
    let center = 0.5 * (n_len as f64 - 1.0);
    let two_pi = std::f64::consts::PI * 2.0;
    let mut raw = vec![0.0f64; n_len];
    let mut draw = vec![0.0f64; n_len];
    let mut sum = 0.0f64;
    let mut dsum = 0.0f64;
    for n in 0..n_len {
        let w = 0.54 - 0.46 * (two_pi * n as f64 / n_len as f64).cos();
        let d = n as f64 - center;
        let s = sinc(ratio * d);
        raw[n] = ratio * s * w;
        draw[n] = w * (s + ratio * d * sinc_deriv(ratio * d));
        sum += raw[n];
        dsum += draw[n];
    }
    if !(sum > 0.0) {
        return Err(PcError::DegenerateFilter(format!(
            "tap sum {} is not positive at ratio {}",
            sum, ratio
        )));
    }
    let mut taps = vec![0.0f64; n_len];
    let mut dtaps = vec![0.0f64; n_len];
    for n in 0..n_len {
        taps[n] = raw[n] / sum;
        dtaps[n] = (draw[n] * sum - raw[n] * dsum) / (sum * sum);
    }
    Ok((taps, dtaps))
}
