//! Training loop: adaptive-moment updates (beta1 = 0 by default, so the
//! step is momentum-free and second-moment-scaled), optional global-norm
//! gradient clipping, bitwise-reproducible checkpoints and loss curves.

use crate::data::{Archive, SequenceBatch};
use crate::error::{PcError, Result};
use crate::loss::{losses_for_rollout, LossReport, LossWeights, PerceptualBackbone};
use crate::network::{NetworkConfig, PcNetwork, RolloutMode};
use crate::tensor::{GradMode, Graph, Real};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_t1")]
    pub t1: usize,
    #[serde(default = "default_t2")]
    pub t2: usize,
    /// Perceptual loss on/off.
    #[serde(default = "default_true")]
    pub perceptual: bool,
    /// Anti-aliasing low-pass on/off (the "w/o Filter" ablation).
    #[serde(default = "default_true")]
    pub filter: bool,
    /// Global-norm gradient clipping; None trains unclipped.
    #[serde(default)]
    pub clip_grad_norm: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Steps between checkpoints when the CLI drives training (0 = end only).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Optional external perceptual weights (checkpoint archive format).
    #[serde(default)]
    pub backbone_path: Option<String>,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_beta2() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    1
}
fn default_steps() -> usize {
    500
}
fn default_t1() -> usize {
    5
}
fn default_t2() -> usize {
    5
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            beta1: 0.0,
            beta2: default_beta2(),
            epsilon: default_eps(),
            batch_size: default_batch(),
            steps: default_steps(),
            t1: default_t1(),
            t2: default_t2(),
            perceptual: true,
            filter: true,
            clip_grad_norm: None,
            seed: 0,
            checkpoint_every: 0,
            backbone_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(PcError::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(PcError::InvalidConfig(
                "optimizer moments must lie in [0, 1)".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(PcError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(PcError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.t1 < 1 || self.t1 + self.t2 < 2 {
            return Err(PcError::InvalidConfig(
                "need t1 >= 1 and t1 + t2 >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction. With beta1 = 0 the first moment is the raw
/// gradient and the update is lr * g / (sqrt(vhat) + eps).
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig, shapes: &[Vec<usize>]) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: shapes
                .iter()
                .map(|s| ArrayD::zeros(ndarray::IxDyn(s)))
                .collect(),
            v: shapes
                .iter()
                .map(|s| ArrayD::zeros(ndarray::IxDyn(s)))
                .collect(),
        }
    }

    /// One update over parameters given by mutable views aligned with the
    /// gradient list.
    pub fn step(
        &mut self,
        params: &mut [(String, ndarray::ArrayViewMutD<'_, T>)],
        grads: &[ArrayD<T>],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(PcError::InvalidArgument(format!(
                "optimizer state for {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1 = T::cast(self.beta1);
        let b2 = T::cast(self.beta2);
        let one = T::one();
        let corr1 = T::cast(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = T::cast(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::cast(self.lr);
        let eps = T::cast(self.eps);
        for ((m, v), ((_, p), grad)) in self
            .m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(params.iter_mut().zip(grads.iter()))
        {
            ndarray::Zip::from(m).and(v).and(p).and(grad).for_each(
                |m, v, p, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / corr1;
                    let vhat = *v / corr2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                },
            );
        }
        Ok(())
    }
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut [ArrayD<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::cast(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub l1: f64,
    pub l2: f64,
    pub lpips: f64,
    pub total: f64,
}

/// `step,L1,L2,Llpips,Ltotal` rows.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("step,L1,L2,Llpips,Ltotal\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.step, p.l1, p.l2, p.lpips, p.total
        ));
    }
    out
}

/// Network + optimizer + step counter; everything a checkpoint restores.
pub struct Trainer<T: Real> {
    pub net: PcNetwork<T>,
    pub opt: Adam<T>,
    pub cfg: TrainConfig,
    pub backbone: Option<PerceptualBackbone<T>>,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    network: NetworkConfig,
    train: TrainConfig,
}

impl<T: Real> Trainer<T> {
    pub fn new(mut net: PcNetwork<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        net.config.t1 = cfg.t1;
        net.config.t2 = cfg.t2;
        net.config.filter_enabled = cfg.filter;
        net.config.validate()?;
        let backbone = if cfg.perceptual {
            Some(match &cfg.backbone_path {
                Some(p) => PerceptualBackbone::from_archive(&Archive::load(Path::new(p))?)?,
                None => PerceptualBackbone::init(net.config.input.0, cfg.seed),
            })
        } else {
            None
        };
        let shapes: Vec<Vec<usize>> = net
            .visit()
            .iter()
            .map(|(_, v)| v.shape().to_vec())
            .collect();
        let opt = Adam::new(&cfg, &shapes);
        Ok(Trainer {
            net,
            opt,
            cfg,
            backbone,
            step: 0,
        })
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(
            self.net.config.levels,
            self.net.config.input,
            self.net.config.t1,
            self.net.config.t2,
        )
    }

    /// Loss of one sequence under the current parameters, without updating.
    pub fn evaluate_loss(&self, seq: &SequenceBatch<T>) -> Result<LossReport> {
        let mut g = Graph::new(GradMode::Train);
        let (_, report) = self.forward(&mut g, seq)?;
        Ok(report)
    }

    fn forward(
        &self,
        g: &mut Graph<T>,
        seq: &SequenceBatch<T>,
    ) -> Result<(crate::loss::LossVars, LossReport)> {
        let vars = self.net.bind(g, true);
        let bb_vars = self.backbone.as_ref().map(|b| b.bind(g));
        let mode = if self.net.config.t2 > 0 {
            RolloutMode::ClosedLoop
        } else {
            RolloutMode::TeacherForced
        };
        let rollout = self.net.rollout(g, &vars, seq, mode)?;
        let weights = self.loss_weights()?;
        let (lv, report) =
            losses_for_rollout(g, &rollout, &weights, bb_vars.as_ref()).map_err(|e| {
                match e {
                    PcError::Numeric(msg) => PcError::Numeric(format!(
                        "{}; last per-level error norms: {:?}",
                        msg,
                        rollout.diagnostics.error_norms.last()
                    )),
                    other => other,
                }
            })?;
        Ok((lv, report))
    }

    /// Run `steps` optimizer updates, cycling the dataset in order.
    pub fn train(
        &mut self,
        dataset: &[SequenceBatch<T>],
        steps: usize,
    ) -> Result<Vec<CurvePoint>> {
        if dataset.is_empty() {
            return Err(PcError::InvalidArgument("dataset is empty".into()));
        }
        let mut curve = Vec::with_capacity(steps);
        let batch = self.cfg.batch_size;
        for _ in 0..steps {
            let mut grads: Option<Vec<ArrayD<T>>> = None;
            let mut acc = LossReport {
                l1: 0.0,
                l2: 0.0,
                lpips: 0.0,
                total: 0.0,
            };
            for j in 0..batch {
                let idx = (self.step as usize * batch + j) % dataset.len();
                let mut g = Graph::new(GradMode::Train);
                let vars = self.net.bind(&mut g, true);
                let bb_vars = self.backbone.as_ref().map(|b| b.bind(&mut g));
                let mode = if self.net.config.t2 > 0 {
                    RolloutMode::ClosedLoop
                } else {
                    RolloutMode::TeacherForced
                };
                let rollout = self.net.rollout(&mut g, &vars, &dataset[idx], mode)?;
                let weights = self.loss_weights()?;
                let (lv, report) =
                    losses_for_rollout(&mut g, &rollout, &weights, bb_vars.as_ref()).map_err(
                        |e| match e {
                            PcError::Numeric(msg) => PcError::Numeric(format!(
                                "step {}: {}; last per-level error norms: {:?}",
                                self.step,
                                msg,
                                rollout.diagnostics.error_norms.last()
                            )),
                            other => other,
                        },
                    )?;
                g.backward(lv.total)?;
                let flat = vars.collect();
                let slot = grads.get_or_insert_with(|| {
                    flat.iter()
                        .map(|&v| ArrayD::zeros(g.value(v).raw_dim()))
                        .collect()
                });
                for (dst, &var) in slot.iter_mut().zip(flat.iter()) {
                    if let Some(gv) = g.grad(var) {
                        *dst += &gv;
                    }
                }
                acc.l1 += report.l1;
                acc.l2 += report.l2;
                acc.lpips += report.lpips;
                acc.total += report.total;
            }
            let mut grads = grads.expect("batch >= 1");
            let inv = T::cast(1.0 / batch as f64);
            for gr in grads.iter_mut() {
                gr.mapv_inplace(|v| v * inv);
            }
            if let Some(max) = self.cfg.clip_grad_norm {
                clip_global_norm(&mut grads, max);
            }
            let mut params = self.net.visit_mut();
            self.opt.step(&mut params, &grads)?;
            self.step += 1;
            curve.push(CurvePoint {
                step: self.step,
                l1: acc.l1 / batch as f64,
                l2: acc.l2 / batch as f64,
                lpips: acc.lpips / batch as f64,
                total: acc.total / batch as f64,
            });
        }
        Ok(curve)
    }

    /// Persist parameters, optimizer state, configs, and the step counter.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            network: self.net.config.clone(),
            train: self.cfg.clone(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| PcError::Format(format!("config snapshot: {}", e)))?;
        let mut archive = Archive::new(self.step, json);
        for (name, view) in self.net.visit() {
            archive.push_tensor(&name, &view.to_owned());
        }
        for ((name, _), (m, v)) in self
            .net
            .visit()
            .iter()
            .zip(self.opt.m.iter().zip(self.opt.v.iter()))
        {
            archive.push_tensor(&format!("opt/m/{}", name), m);
            archive.push_tensor(&format!("opt/v/{}", name), v);
        }
        archive.save(path)
    }

    /// Rebuild a trainer from a checkpoint, bit-for-bit.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let archive = Archive::load(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&archive.config_json)
            .map_err(|e| PcError::Format(format!("config snapshot: {}", e)))?;
        let net = PcNetwork::<T>::init(meta.network, meta.train.seed)?;
        let mut trainer = Trainer::new(net, meta.train)?;
        trainer.step = archive.step;
        trainer.opt.t = archive.step;
        for (name, mut view) in trainer.net.visit_mut() {
            let loaded: ArrayD<T> = archive.tensor(&name)?;
            if loaded.shape() != view.shape() {
                return Err(PcError::Format(format!(
                    "entry '{}' has shape {:?}, expected {:?}",
                    name,
                    loaded.shape(),
                    view.shape()
                )));
            }
            view.assign(&loaded);
        }
        for (i, (name, _)) in trainer.net.visit().iter().enumerate() {
            trainer.opt.m[i] = archive.tensor(&format!("opt/m/{}", name))?;
            trainer.opt.v[i] = archive.tensor(&format!("opt/v/{}", name))?;
        }
        Ok(trainer)
    }
}
