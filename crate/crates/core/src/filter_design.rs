//! Hamming-windowed sinc low-pass design with learnable cutoff ratios.
//!
//! A cutoff is stored as an unconstrained parameter theta; the logistic map
//! keeps the usable ratio `2 fc / fs` strictly inside (0, 1). Taps are
//! `h(n) = lambda(n) w(n)` with
//!
//! ```text
//! w(n)      = 0.54 - 0.46 cos(2 pi n / N),        0 <= n <= N-1
//! lambda(n) = rho sinc(rho (n - 0.5 (N - 1)))
//! ```
//!
//! then normalized to unit DC gain so constant signals pass unchanged. The
//! default 25-tap filter is reshaped row-major into a 5 x 5 depthwise
//! kernel; a separable outer-product build is available as an alternative
//! layout.

use crate::error::{PcError, Result};
use crate::tensor::{self, Real};
use ndarray::{Array1, Array4};

pub use crate::tensor::FilterLayout;

/// Filter length whose row-major reshape yields the 5 x 5 kernel.
pub const RESHAPE_TAPS: usize = 25;
/// Tap count for the separable outer-product layout (5 x 5 kernel).
pub const SEPARABLE_TAPS: usize = 5;
/// Cutoff ratio the unconstrained parameters start at.
pub const INIT_RATIO: f64 = 0.75;

/// Per-channel unconstrained cutoff parameters for one resampling stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffParams<T: Real> {
    theta: Array1<T>,
    n_len: usize,
}

impl<T: Real> CutoffParams<T> {
    pub fn new(theta: Array1<T>, n_len: usize) -> Result<Self> {
        if theta.is_empty() {
            return Err(PcError::InvalidArgument(
                "cutoff parameters need at least one channel".into(),
            ));
        }
        if n_len == 0 {
            return Err(PcError::InvalidArgument("filter length must be >= 1".into()));
        }
        Ok(CutoffParams { theta, n_len })
    }

    /// All channels start at [`INIT_RATIO`], the midpoint of the range the
    /// ratios settle into when trained.
    pub fn init(channels: usize, n_len: usize) -> Result<Self> {
        let theta0 = T::cast(logit(INIT_RATIO));
        CutoffParams::new(Array1::from_elem(channels, theta0), n_len)
    }

    pub fn channels(&self) -> usize {
        self.theta.len()
    }

    pub fn filter_len(&self) -> usize {
        self.n_len
    }

    pub fn theta(&self) -> &Array1<T> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut Array1<T> {
        &mut self.theta
    }

    /// Constrained cutoff ratios, one per channel.
    pub fn ratios(&self) -> Vec<f64> {
        self.theta
            .iter()
            .map(|&t| 1.0 / (1.0 + (-t.to_f64()).exp()))
            .collect()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The Hamming window exactly as designed: denominator `N`, so the window is
/// slightly asymmetric about the sinc center.
pub fn hamming_window<T: Real>(n_len: usize) -> Result<Array1<T>> {
    tensor::hamming(n_len)
}

/// Ideal low-pass coefficients `lambda(n)` for a cutoff ratio in (0, 1].
/// Ratio 1 is unreachable through the logistic map and exists for limit
/// checks only.
pub fn windowed_sinc<T: Real>(ratio: f64, n_len: usize) -> Result<Array1<T>> {
    tensor::windowed_sinc(ratio, n_len)
}

/// Windowed taps normalized to unit DC gain.
pub fn build_1d_filter<T: Real>(ratio: f64, n_len: usize) -> Result<Array1<T>> {
    tensor::lowpass_taps(ratio, n_len)
}

/// Depthwise anti-aliasing kernel of shape (C, 1, 5, 5); slice c applies to
/// channel c only and sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LowpassKernel<T: Real> {
    pub weights: Array4<T>,
}

pub fn build_depthwise_kernel<T: Real>(params: &CutoffParams<T>) -> Result<LowpassKernel<T>> {
    build_depthwise_kernel_with(params, FilterLayout::Reshape)
}

pub fn build_depthwise_kernel_with<T: Real>(
    params: &CutoffParams<T>,
    layout: FilterLayout,
) -> Result<LowpassKernel<T>> {
    let side = match layout {
        FilterLayout::Reshape => {
            if params.n_len != RESHAPE_TAPS {
                return Err(PcError::InvalidConfig(format!(
                    "reshape layout needs filter length {}, got {}",
                    RESHAPE_TAPS, params.n_len
                )));
            }
            5
        }
        FilterLayout::Separable => params.n_len,
    };
    let channels = params.channels();
    let mut weights = Array4::<T>::zeros((channels, 1, side, side));
    for (c, rho) in params.ratios().into_iter().enumerate() {
        let taps = build_1d_filter::<T>(rho, params.n_len)?;
        match layout {
            FilterLayout::Reshape => {
                for i in 0..side {
                    for j in 0..side {
                        weights[(c, 0, i, j)] = taps[i * side + j];
                    }
                }
            }
            FilterLayout::Separable => {
                for i in 0..side {
                    for j in 0..side {
                        weights[(c, 0, i, j)] = taps[i] * taps[j];
                    }
                }
            }
        }
    }
    Ok(LowpassKernel { weights })
}

/// Mean and population standard deviation of the cutoff ratios, one row per
/// level. This is the instrumentation behind `inspect-filters`.
pub fn ratio_stats<T: Real>(params_per_level: &[CutoffParams<T>]) -> Result<Vec<(f64, f64)>> {
    if params_per_level.is_empty() {
        return Err(PcError::InvalidArgument(
            "ratio statistics need at least one level".into(),
        ));
    }
    let mut out = Vec::with_capacity(params_per_level.len());
    for p in params_per_level {
        let ratios = p.ratios();
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        out.push((mean, var.sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_endpoints_and_center() {
        let w = hamming_window::<f64>(25).unwrap();
        assert!((w[0] - 0.08).abs() < 1e-15);
        // Frozen from a high-precision evaluation of the window formula.
        assert!((w[12] - 0.99637276260465980).abs() < 1e-13);
        let single = hamming_window::<f64>(1).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single[0] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn hamming_zero_length_rejected() {
        assert!(matches!(
            hamming_window::<f64>(0),
            Err(PcError::InvalidArgument(_))
        ));
    }

    #[test]
    fn windowed_sinc_center_equals_ratio() {
        for &rho in &[0.1, 0.5, 0.9] {
            let lam = windowed_sinc::<f64>(rho, 25).unwrap();
            assert!((lam[12] - rho).abs() < 1e-15);
        }
    }

    #[test]
    fn windowed_sinc_impulse_at_unit_ratio() {
        let lam = windowed_sinc::<f64>(1.0, 25).unwrap();
        for n in 0..25 {
            let expect = if n == 12 { 1.0 } else { 0.0 };
            assert!((lam[n] - expect).abs() < 1e-12, "n={} lam={}", n, lam[n]);
        }
    }

    #[test]
    fn windowed_sinc_half_ratio_value() {
        // 0.5 * sinc(0.5) = 1 / pi, frozen from direct evaluation.
        let lam = windowed_sinc::<f64>(0.5, 25).unwrap();
        assert!((lam[13] - 0.3183098861837907).abs() < 1e-14);
    }

    #[test]
    fn windowed_sinc_rejects_bad_ratio() {
        assert!(matches!(
            windowed_sinc::<f64>(0.0, 25),
            Err(PcError::InvalidArgument(_))
        ));
        assert!(matches!(
            windowed_sinc::<f64>(-0.3, 25),
            Err(PcError::InvalidArgument(_))
        ));
        assert!(matches!(
            windowed_sinc::<f64>(1.5, 25),
            Err(PcError::InvalidArgument(_))
        ));
    }

    #[test]
    fn filter_has_unit_dc_gain() {
        for &rho in &[0.2, 0.5, 0.75, 0.999] {
            let h = build_1d_filter::<f64>(rho, 25).unwrap();
            assert!((h.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_near_unit_ratio_is_one_hot() {
        let h = build_1d_filter::<f64>(1.0 - 1e-9, 25).unwrap();
        for n in 0..25 {
            let expect = if n == 12 { 1.0 } else { 0.0 };
            assert!((h[n] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_is_symmetric_window_is_not() {
        let lam = windowed_sinc::<f64>(0.5, 25).unwrap();
        for n in 0..25 {
            assert!((lam[n] - lam[24 - n]).abs() < 1e-15);
        }
        let h = build_1d_filter::<f64>(0.5, 25).unwrap();
        let max_asym = (0..25)
            .map(|n| (h[n] - h[24 - n]).abs())
            .fold(0.0f64, f64::max);
        // All asymmetry comes from the window's N denominator; frozen bound
        // from a high-precision evaluation (0.009178...).
        assert!(max_asym > 0.0);
        assert!(max_asym < 0.0092, "max asymmetry {}", max_asym);
    }

    #[test]
    fn depthwise_kernel_structure() {
        let params = CutoffParams::<f64>::new(
            Array1::from(vec![logit(0.8), 0.0, logit(0.9)]),
            25,
        )
        .unwrap();
        let kern = build_depthwise_kernel(&params).unwrap();
        assert_eq!(kern.weights.dim(), (3, 1, 5, 5));
        for c in 0..3 {
            let sum: f64 = kern.weights.slice(ndarray::s![c, 0, .., ..]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // Channel independence: slice c equals the single-channel build.
        let single = build_depthwise_kernel(
            &CutoffParams::<f64>::new(Array1::from(vec![0.0]), 25).unwrap(),
        )
        .unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(kern.weights[(1, 0, i, j)], single.weights[(0, 0, i, j)]);
            }
        }
    }

    #[test]
    fn depthwise_kernel_high_theta_is_center_one_hot() {
        // logistic(25) = 1 - 1.4e-11; the kernel must collapse onto (2, 2).
        let params = CutoffParams::<f64>::new(Array1::from(vec![25.0]), 25).unwrap();
        let kern = build_depthwise_kernel(&params).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if (i, j) == (2, 2) { 1.0 } else { 0.0 };
                assert!((kern.weights[(0, 0, i, j)] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn depthwise_kernel_rejects_other_lengths() {
        let params = CutoffParams::<f64>::new(Array1::from(vec![0.0]), 9).unwrap();
        assert!(matches!(
            build_depthwise_kernel(&params),
            Err(PcError::InvalidConfig(_))
        ));
    }

    #[test]
    fn separable_layout_also_sums_to_one() {
        let params = CutoffParams::<f64>::new(Array1::from(vec![0.3]), 5).unwrap();
        let kern = build_depthwise_kernel_with(&params, FilterLayout::Separable).unwrap();
        assert_eq!(kern.weights.dim(), (1, 1, 5, 5));
        let sum: f64 = kern.weights.sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_stats_examples() {
        let level0 =
            CutoffParams::<f64>::new(Array1::from(vec![0.0, 0.0, 0.0]), 25).unwrap();
        let level1 =
            CutoffParams::<f64>::new(Array1::from(vec![logit(0.8), logit(0.9)]), 25).unwrap();
        let stats = ratio_stats(&[level0, level1]).unwrap();
        assert!((stats[0].0 - 0.5).abs() < 1e-12);
        assert!(stats[0].1.abs() < 1e-12);
        assert!((stats[1].0 - 0.85).abs() < 1e-12);

        let single = CutoffParams::<f64>::new(Array1::from(vec![1.3]), 25).unwrap();
        let stats = ratio_stats(&[single]).unwrap();
        assert!(stats[0].1.abs() < 1e-15);
    }

    #[test]
    fn ratio_stats_empty_rejected() {
        let empty: Vec<CutoffParams<f64>> = Vec::new();
        assert!(matches!(
            ratio_stats(&empty),
            Err(PcError::InvalidArgument(_))
        ));
    }

    #[test]
    fn init_starts_at_init_ratio() {
        let p = CutoffParams::<f64>::init(4, 25).unwrap();
        for r in p.ratios() {
            assert!((r - INIT_RATIO).abs() < 1e-12);
        }
    }
}
