//! The three-part training objective and its weight schedules.
//!
//! ```text
//! L1     = sum_t sum_l      lambda_t lambda_l ||f_l^t - P_l^{t-1}||^2
//! L2     = sum_{t>=T1} sum_{l>=1} lambda_t lambda_l ||f_l^t - fhat_l^t||^2
//! L      = L1 + L2 + (c h w) Llpips
//! ```
//!
//! Sums over tensors are element sums, not means: the c*h*w coefficient on
//! the perceptual term exists exactly to match that scale. Time weights are
//! (0.5, 1, 1, ...) and level weights decay linearly to zero at the top
//! level. Sums run over the terms that exist: L1 from t = 1 (there is no
//! prediction before step 0) and L2 over the prediction horizon.

use crate::error::{PcError, Result};
use crate::init::kaiming_uniform;
use crate::network::Rollout;
use crate::tensor::{Graph, Real, Var};
use ndarray::{Array1, Array4, ArrayD, IxDyn};

/// Schedules and coefficients for one training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Per-timestep weights, length T: [0.5, 1, 1, ...].
    pub lambda_t: Vec<f64>,
    /// Per-level weights, length L: ((L-1) - l) / (L-1).
    pub lambda_l: Vec<f64>,
    /// Coefficient on the perceptual term: c * h * w of the input frames.
    pub lambda_lpips: f64,
    pub t1: usize,
    pub t2: usize,
}

/// `lambda_l = ((L-1) - l) / (L-1)`; the top level gets weight zero.
pub fn level_weights(levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(PcError::InvalidArgument(format!(
            "level weights need L >= 2, got {}",
            levels
        )));
    }
    Ok((0..levels)
        .map(|l| ((levels - 1 - l) as f64) / ((levels - 1) as f64))
        .collect())
}

/// `(0.5, 1, 1, ...)`: the first timestep is downweighted, all later ones
/// count fully.
pub fn time_weights(total_t: usize) -> Vec<f64> {
    (0..total_t).map(|t| if t == 0 { 0.5 } else { 1.0 }).collect()
}

impl LossWeights {
    pub fn new(levels: usize, input: (usize, usize, usize), t1: usize, t2: usize) -> Result<Self> {
        Ok(LossWeights {
            lambda_t: time_weights(t1 + t2),
            lambda_l: level_weights(levels)?,
            lambda_lpips: (input.0 * input.1 * input.2) as f64,
            t1,
            t2,
        })
    }

    fn total_t(&self) -> usize {
        self.t1 + self.t2
    }
}

/// Weighted squared distance between ground-truth encodings and the
/// previous step's predictions, summed over t = 1..T-1 and all levels.
pub fn prediction_loss<T: Real>(
    g: &mut Graph<T>,
    f_gt: &[Vec<Var>],
    pred_levels: &[Vec<Var>],
    w: &LossWeights,
) -> Result<Var> {
    let total = w.total_t();
    if f_gt.len() != total || pred_levels.len() != total - 1 {
        return Err(PcError::InvalidArgument(format!(
            "cache misalignment: {} encodings and {} prediction steps for T = {}",
            f_gt.len(),
            pred_levels.len(),
            total
        )));
    }
    let mut terms = Vec::new();
    for t in 1..total {
        if f_gt[t].len() != w.lambda_l.len() || pred_levels[t - 1].len() != w.lambda_l.len() {
            return Err(PcError::InvalidArgument(format!(
                "cache misalignment at t = {}: {} levels cached, {} expected",
                t,
                f_gt[t].len(),
                w.lambda_l.len()
            )));
        }
        for (l, &ll) in w.lambda_l.iter().enumerate() {
            let coeff = w.lambda_t[t] * ll;
            if coeff == 0.0 {
                continue; // the top level contributes nothing
            }
            let diff = g.sub(f_gt[t][l], pred_levels[t - 1][l])?;
            let ss = g.sum_squares(diff);
            terms.push((ss, T::cast(coeff)));
        }
    }
    sum_scalar_terms(g, &terms)
}

/// Weighted squared distance between ground-truth and predicted-frame
/// encodings over the horizon, levels 1 and up. Zero when T2 = 0.
pub fn encoding_loss<T: Real>(
    g: &mut Graph<T>,
    f_gt: &[Vec<Var>],
    f_hat: &[Vec<Var>],
    w: &LossWeights,
) -> Result<Var> {
    let total = w.total_t();
    if w.t2 == 0 {
        return Ok(zero_scalar(g));
    }
    if f_hat.is_empty() {
        return Err(PcError::State(
            "encoding loss needs predicted-frame encodings, none were cached".into(),
        ));
    }
    if f_gt.len() != total || f_hat.len() != w.t2 {
        return Err(PcError::InvalidArgument(format!(
            "cache misalignment: {} encodings and {} horizon encodings for T1 = {}, T2 = {}",
            f_gt.len(),
            f_hat.len(),
            w.t1,
            w.t2
        )));
    }
    let mut terms = Vec::new();
    for t in w.t1..total {
        for (l, &ll) in w.lambda_l.iter().enumerate().skip(1) {
            let coeff = w.lambda_t[t] * ll;
            if coeff == 0.0 {
                continue;
            }
            let diff = g.sub(f_gt[t][l], f_hat[t - w.t1][l])?;
            let ss = g.sum_squares(diff);
            terms.push((ss, T::cast(coeff)));
        }
    }
    sum_scalar_terms(g, &terms)
}

/// Fixed random multi-scale feature stack used as the perceptual distance
/// when no pretrained weights are available. Channel-unit-normalized
/// features, averaged squared differences per stage.
#[derive(Debug, Clone)]
pub struct PerceptualBackbone<T: Real> {
    pub stages: Vec<(Array4<T>, Array1<T>)>,
}

/// Seed offset so the backbone never shares streams with the model init.
const BACKBONE_SEED_SALT: u64 = 0x7063_6c70;

impl<T: Real> PerceptualBackbone<T> {
    pub fn init(input_channels: usize, seed: u64) -> Self {
        let mut rng = crate::data::rng_from_seed(seed ^ BACKBONE_SEED_SALT);
        let widths = [input_channels, 8, 16, 32];
        let mut stages = Vec::new();
        for s in 0..3 {
            let w = kaiming_uniform::<T, _>(
                &[widths[s + 1], widths[s], 3, 3],
                widths[s] * 9,
                &mut rng,
            )
            .into_dimensionality()
            .expect("static shape");
            stages.push((w, Array1::zeros(widths[s + 1])));
        }
        PerceptualBackbone { stages }
    }

    pub fn input_channels(&self) -> usize {
        self.stages[0].0.dim().1
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BackboneVars {
        BackboneVars {
            stages: self
                .stages
                .iter()
                .map(|(w, b)| {
                    (
                        g.leaf(w.clone().into_dyn(), false),
                        g.leaf(b.clone().into_dyn(), false),
                    )
                })
                .collect(),
        }
    }

    /// Archive the backbone weights (for external fidelity weights, the
    /// same format is accepted by `from_archive`).
    pub fn to_archive(&self) -> crate::data::Archive {
        let mut a = crate::data::Archive::new(0, String::from("{\"kind\":\"perceptual\"}"));
        for (i, (w, b)) in self.stages.iter().enumerate() {
            a.push_tensor(&format!("perceptual/stage{}/weight", i), &w.clone().into_dyn());
            a.push_tensor(&format!("perceptual/stage{}/bias", i), &b.clone().into_dyn());
        }
        a
    }

    pub fn from_archive(archive: &crate::data::Archive) -> Result<Self> {
        let mut stages = Vec::new();
        for i in 0.. {
            let wname = format!("perceptual/stage{}/weight", i);
            if !archive.names().contains(&wname.as_str()) {
                break;
            }
            let w: ArrayD<T> = archive.tensor(&wname)?;
            let b: ArrayD<T> = archive.tensor(&format!("perceptual/stage{}/bias", i))?;
            stages.push((
                w.into_dimensionality()
                    .map_err(|e| PcError::Format(format!("stage {} weight: {}", i, e)))?,
                b.into_dimensionality()
                    .map_err(|e| PcError::Format(format!("stage {} bias: {}", i, e)))?,
            ));
        }
        if stages.is_empty() {
            return Err(PcError::Format(
                "archive holds no perceptual stages".into(),
            ));
        }
        Ok(PerceptualBackbone { stages })
    }
}

pub struct BackboneVars {
    pub stages: Vec<(Var, Var)>,
}

fn backbone_features<T: Real>(
    g: &mut Graph<T>,
    vars: &BackboneVars,
    x: Var,
) -> Result<Vec<Var>> {
    let eps = T::cast(1e-10);
    let mut feats = Vec::new();
    let mut cur = x;
    for &(w, b) in &vars.stages {
        let conv = g.conv2d(cur, w, Some(b), 2, 1)?;
        let act = g.leaky_relu(conv, 0.2);
        feats.push(g.channel_unit_norm(act, eps)?);
        cur = act;
    }
    Ok(feats)
}

/// Differentiable perceptual distance: nonnegative, exactly zero on
/// identical inputs.
pub fn perceptual_distance<T: Real>(
    g: &mut Graph<T>,
    vars: &BackboneVars,
    a: Var,
    b: Var,
) -> Result<Var> {
    let fa = backbone_features(g, vars, a)?;
    let fb = backbone_features(g, vars, b)?;
    let mut terms = Vec::new();
    for (&xa, &xb) in fa.iter().zip(fb.iter()) {
        let diff = g.sub(xa, xb)?;
        let n = g.value(diff).len() as f64;
        let ss = g.sum_squares(diff);
        terms.push((ss, T::cast(1.0 / n)));
    }
    sum_scalar_terms(g, &terms)
}

/// Time-weighted perceptual loss over (frame t, prediction t-1) pairs.
/// `None` contributes zero (the disabled configuration).
pub fn perceptual_loss<T: Real>(
    g: &mut Graph<T>,
    frames: &[Var],
    predictions: &[Var],
    w: &LossWeights,
    backbone: Option<&BackboneVars>,
) -> Result<Var> {
    let vars = match backbone {
        Some(v) => v,
        None => return Ok(zero_scalar(g)),
    };
    let total = w.total_t();
    if frames.len() != total || predictions.len() != total - 1 {
        return Err(PcError::InvalidArgument(format!(
            "cache misalignment: {} frames, {} predictions for T = {}",
            frames.len(),
            predictions.len(),
            total
        )));
    }
    let mut terms = Vec::new();
    for t in 1..total {
        let d = perceptual_distance(g, vars, frames[t], predictions[t - 1])?;
        terms.push((d, T::cast(w.lambda_t[t])));
    }
    sum_scalar_terms(g, &terms)
}

/// All four loss heads of one rollout.
pub struct LossVars {
    pub l1: Var,
    pub l2: Var,
    pub lpips: Var,
    pub total: Var,
}

/// Scalar copies of a [`LossVars`], for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    pub lpips: f64,
    pub total: f64,
}

/// `L1 + L2 + lambda * Llpips`, with a finiteness check.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    l1: Var,
    l2: Var,
    lpips: Var,
    w: &LossWeights,
) -> Result<Var> {
    for (name, v) in [("L1", l1), ("L2", l2), ("Llpips", lpips)] {
        let val = g.scalar_value(v);
        if !val.is_finite() {
            return Err(PcError::Numeric(format!(
                "loss component {} is not finite: {}",
                name, val
            )));
        }
    }
    g.weighted_sum(&[
        (l1, T::one()),
        (l2, T::one()),
        (lpips, T::cast(w.lambda_lpips)),
    ])
}

/// Convenience: all losses of a completed rollout.
pub fn losses_for_rollout<T: Real>(
    g: &mut Graph<T>,
    rollout: &Rollout,
    w: &LossWeights,
    backbone: Option<&BackboneVars>,
) -> Result<(LossVars, LossReport)> {
    let l1 = prediction_loss(g, &rollout.f_gt, &rollout.pred_levels, w)?;
    let l2 = encoding_loss(g, &rollout.f_gt, &rollout.f_hat, w)?;
    let frames: Vec<Var> = rollout.f_gt.iter().map(|per_level| per_level[0]).collect();
    let lpips = perceptual_loss(g, &frames, &rollout.predictions, w, backbone)?;
    let total = total_loss(g, l1, l2, lpips, w)?;
    let report = LossReport {
        l1: g.scalar_value(l1).to_f64(),
        l2: g.scalar_value(l2).to_f64(),
        lpips: g.scalar_value(lpips).to_f64(),
        total: g.scalar_value(total).to_f64(),
    };
    Ok((
        LossVars {
            l1,
            l2,
            lpips,
            total,
        },
        report,
    ))
}

fn zero_scalar<T: Real>(g: &mut Graph<T>) -> Var {
    g.leaf(ArrayD::zeros(IxDyn(&[1])), false)
}

fn sum_scalar_terms<T: Real>(g: &mut Graph<T>, terms: &[(Var, T)]) -> Result<Var> {
    if terms.is_empty() {
        return Ok(zero_scalar(g));
    }
    g.weighted_sum(terms)
}
