//! Central finite-difference gradient checking.
//!
//! The network runs in f32 for training, but every layer is generic over the
//! scalar type; checks are run in f64 where central differences with
//! `eps ~ 1e-5` resolve gradients to far better than the 1e-3 relative
//! tolerance used throughout the test suites.

use ndarray::ArrayD;

/// Numerical gradient of `eval` at `params` by central differences,
/// one entry at a time.
pub fn central_diff<F>(params: &[ArrayD<f64>], mut eval: F, eps: f64) -> Vec<ArrayD<f64>>
where
    F: FnMut(&[ArrayD<f64>]) -> f64,
{
    let mut work: Vec<ArrayD<f64>> = params.to_vec();
    let mut grads: Vec<ArrayD<f64>> = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
    for pi in 0..params.len() {
        for idx in 0..params[pi].len() {
            let orig = work[pi].as_slice().unwrap()[idx];
            work[pi].as_slice_mut().unwrap()[idx] = orig + eps;
            let hi = eval(&work);
            work[pi].as_slice_mut().unwrap()[idx] = orig - eps;
            let lo = eval(&work);
            work[pi].as_slice_mut().unwrap()[idx] = orig;
            grads[pi].as_slice_mut().unwrap()[idx] = (hi - lo) / (2.0 * eps);
        }
    }
    grads
}

/// Largest relative disagreement `|a - b| / max(1, |a|, |b|)` over all
/// entries of all tensors.
pub fn max_rel_err(analytic: &[ArrayD<f64>], numeric: &[ArrayD<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        for (&av, &nv) in a.iter().zip(n.iter()) {
            let denom = av.abs().max(nv.abs()).max(1.0);
            let rel = (av - nv).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
