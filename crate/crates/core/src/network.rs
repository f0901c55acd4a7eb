//! The corrected predictive-coding hierarchy.
//!
//! Each time step runs three phases:
//!
//! 1. bottom-up: encode the *current* frame through the feature
//!    downsamplers (so every level sees the same time step), compute
//!    rectified prediction errors against the previous step's predictions,
//!    and merge each level's error with the downsampled error from below —
//!    errors and sensory inputs travel as separate signals;
//! 2. recurrent: fuse sensory input with the merged error (ModError) and
//!    update the level's ConvLSTM memory;
//! 3. top-down: the top level predicts from its recurrent output alone;
//!    every lower level fuses the upsampled higher prediction with its own
//!    recurrent output (ModPred).
//!
//! The returned level-0 prediction is the next-frame estimate.

use crate::data::SequenceBatch;
use crate::error::{PcError, Result};
use crate::filter_design::{CutoffParams, FilterLayout};
use crate::modulation::{mod_error, mod_pred, FusionKind, FusionUnit, FusionVars};
use crate::recurrent::{conv_lstm_step, zero_state, CellState, ConvLstmCell, ConvLstmVars};
use crate::resample::{
    downsample, upsample, DownsampleStage, DownsampleVars, ResampleOpts, UpsampleKind,
    UpsampleStage, UpsampleVars,
};
use crate::tensor::{Graph, Real, Var};
use ndarray::{Array1, Array3, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

/// How prediction errors are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Positive and negative parts in separate channels (default).
    RectifiedSplit,
    /// The literal absolute-value pair: both channel halves carry |f - P|.
    AbsPair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    /// (channels, height, width) of input frames; channels[0] must match.
    pub input: (usize, usize, usize),
    pub t1: usize,
    pub t2: usize,
    #[serde(default = "default_fusion")]
    pub fusion: FusionKind,
    #[serde(default = "default_true")]
    pub filter_enabled: bool,
    #[serde(default = "default_layout")]
    pub filter_layout: FilterLayout,
    #[serde(default = "default_upsample")]
    pub upsample: UpsampleKind,
    #[serde(default = "default_true")]
    pub special_init: bool,
    #[serde(default = "default_error_mode")]
    pub error_mode: ErrorMode,
}

fn default_fusion() -> FusionKind {
    FusionKind::Modulate
}
fn default_true() -> bool {
    true
}
fn default_layout() -> FilterLayout {
    FilterLayout::Reshape
}
fn default_upsample() -> UpsampleKind {
    UpsampleKind::Interleave
}
fn default_error_mode() -> ErrorMode {
    ErrorMode::RectifiedSplit
}

impl NetworkConfig {
    /// Desk-scale default: three levels over 64x64 grayscale frames.
    pub fn desk_default() -> Self {
        NetworkConfig {
            levels: 3,
            channels: vec![1, 16, 32],
            input: (1, 64, 64),
            t1: 5,
            t2: 5,
            fusion: default_fusion(),
            filter_enabled: true,
            filter_layout: default_layout(),
            upsample: default_upsample(),
            special_init: true,
            error_mode: default_error_mode(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(PcError::InvalidConfig(format!(
                "need at least 2 levels, got {}",
                self.levels
            )));
        }
        if self.channels.len() != self.levels {
            return Err(PcError::InvalidConfig(format!(
                "{} channel widths for {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        let (c, h, w) = self.input;
        if self.channels[0] != c {
            return Err(PcError::InvalidConfig(format!(
                "level-0 width {} must equal frame channels {}",
                self.channels[0], c
            )));
        }
        let div = 1usize << (self.levels - 1);
        if h % div != 0 || w % div != 0 {
            return Err(PcError::InvalidConfig(format!(
                "{}x{} input not divisible by 2^{}",
                h,
                w,
                self.levels - 1
            )));
        }
        if self.t1 < 1 {
            return Err(PcError::InvalidConfig("t1 must be at least 1".into()));
        }
        if self.t1 + self.t2 < 2 {
            return Err(PcError::InvalidConfig(
                "t1 + t2 must be at least 2 (one step)".into(),
            ));
        }
        Ok(())
    }

    pub fn resample_opts(&self) -> ResampleOpts {
        ResampleOpts {
            filter_enabled: self.filter_enabled,
            layout: self.filter_layout,
            upsample: self.upsample,
        }
    }

    fn taps(&self) -> usize {
        self.resample_opts().taps()
    }

    /// Spatial dims at a level.
    pub fn level_dims(&self, level: usize) -> (usize, usize) {
        (self.input.1 >> level, self.input.2 >> level)
    }

    /// Total sequence length T = T1 + T2.
    pub fn total_t(&self) -> usize {
        self.t1 + self.t2
    }
}

/// All learnable parameters, owned off-graph.
#[derive(Debug, Clone)]
pub struct PcNetwork<T: Real> {
    pub config: NetworkConfig,
    pub down_f: Vec<DownsampleStage<T>>,
    pub down_e: Vec<DownsampleStage<T>>,
    pub merge_alpha: Vec<Array1<T>>,
    pub merge_beta: Vec<Array1<T>>,
    pub mod_error: Vec<FusionUnit<T>>,
    pub cells: Vec<ConvLstmCell<T>>,
    pub up: Vec<UpsampleStage<T>>,
    pub mod_pred: Vec<FusionUnit<T>>,
}

impl<T: Real> PcNetwork<T> {
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::data::rng_from_seed(seed);
        let levels = config.levels;
        let ch = &config.channels;
        let taps = config.taps();
        let mut down_f = Vec::new();
        let mut down_e = Vec::new();
        let mut up = Vec::new();
        for l in 1..levels {
            down_f.push(DownsampleStage::init(ch[l - 1], ch[l], taps, &mut rng)?);
        }
        for l in 1..levels {
            down_e.push(DownsampleStage::init(
                2 * ch[l - 1],
                2 * ch[l],
                taps,
                &mut rng,
            )?);
        }
        for l in 0..levels - 1 {
            up.push(UpsampleStage::init(
                ch[l + 1],
                ch[l],
                taps,
                config.special_init,
                &mut rng,
            )?);
        }
        let merge_alpha = (1..levels).map(|_| Array1::from_elem(1, T::one())).collect();
        let merge_beta = (1..levels).map(|_| Array1::from_elem(1, T::one())).collect();
        let mod_error = (0..levels)
            .map(|l| FusionUnit::init(config.fusion, ch[l], 2 * ch[l], &mut rng))
            .collect();
        let cells = (0..levels)
            .map(|l| ConvLstmCell::init(ch[l], &mut rng))
            .collect();
        let mod_pred = (0..levels - 1)
            .map(|l| FusionUnit::init(config.fusion, ch[l], ch[l], &mut rng))
            .collect();
        Ok(PcNetwork {
            config,
            down_f,
            down_e,
            merge_alpha,
            merge_beta,
            mod_error,
            cells,
            up,
            mod_pred,
        })
    }

    /// Every parameter exactly zero (modulation alphas included): the whole
    /// network maps zero input to zero prediction. Test scaffolding.
    pub fn zeroed(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let levels = config.levels;
        let ch = config.channels.clone();
        let taps = config.taps();
        let mut down_f = Vec::new();
        let mut down_e = Vec::new();
        let mut up = Vec::new();
        for l in 1..levels {
            down_f.push(DownsampleStage::zeroed(ch[l - 1], ch[l], taps)?);
            down_e.push(DownsampleStage::zeroed(2 * ch[l - 1], 2 * ch[l], taps)?);
        }
        for l in 0..levels - 1 {
            up.push(UpsampleStage::zeroed(ch[l + 1], ch[l], taps)?);
        }
        let zero_scalar = || Array1::from_elem(1, T::zero());
        let mut mod_error: Vec<FusionUnit<T>> = Vec::new();
        let mut mod_pred: Vec<FusionUnit<T>> = Vec::new();
        for l in 0..levels {
            let mut unit = crate::modulation::ModulationUnit::identity_init(ch[l], 2 * ch[l]);
            unit.alpha = zero_scalar();
            mod_error.push(FusionUnit::Modulate(unit));
        }
        for l in 0..levels - 1 {
            let mut unit = crate::modulation::ModulationUnit::identity_init(ch[l], ch[l]);
            unit.alpha = zero_scalar();
            mod_pred.push(FusionUnit::Modulate(unit));
        }
        Ok(PcNetwork {
            config,
            down_f,
            down_e,
            merge_alpha: (1..levels).map(|_| zero_scalar()).collect(),
            merge_beta: (1..levels).map(|_| zero_scalar()).collect(),
            mod_error,
            cells: ch.iter().map(|&c| ConvLstmCell::zeroed(c)).collect(),
            up,
            mod_pred,
        })
    }

    /// Named views over every parameter, in the fixed traversal order shared
    /// with [`PcNetwork::bind`] and [`PcNetwork::visit_mut`].
    pub fn visit(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (i, s) in self.down_f.iter().enumerate() {
            out.push((format!("down_f/{}/conv_weight", i), s.conv_weight.view().into_dyn()));
            out.push((format!("down_f/{}/conv_bias", i), s.conv_bias.view().into_dyn()));
            out.push((format!("down_f/{}/cutoff_theta", i), s.lowpass.theta().view().into_dyn()));
        }
        for (i, s) in self.down_e.iter().enumerate() {
            out.push((format!("down_e/{}/conv_weight", i), s.conv_weight.view().into_dyn()));
            out.push((format!("down_e/{}/conv_bias", i), s.conv_bias.view().into_dyn()));
            out.push((format!("down_e/{}/cutoff_theta", i), s.lowpass.theta().view().into_dyn()));
        }
        for (i, (a, b)) in self.merge_alpha.iter().zip(self.merge_beta.iter()).enumerate() {
            out.push((format!("merge/{}/alpha", i + 1), a.view().into_dyn()));
            out.push((format!("merge/{}/beta", i + 1), b.view().into_dyn()));
        }
        for (l, u) in self.mod_error.iter().enumerate() {
            visit_fusion(&format!("mod_error/{}", l), u, &mut out);
        }
        for (l, c) in self.cells.iter().enumerate() {
            out.push((format!("cell/{}/weight", l), c.weight.view().into_dyn()));
            out.push((format!("cell/{}/bias", l), c.bias.view().into_dyn()));
        }
        for (i, u) in self.up.iter().enumerate() {
            out.push((format!("up/{}/interp", i), u.interp.view().into_dyn()));
            out.push((format!("up/{}/cutoff_theta", i), u.lowpass.theta().view().into_dyn()));
            out.push((format!("up/{}/map_weight", i), u.map_weight.view().into_dyn()));
            out.push((format!("up/{}/map_bias", i), u.map_bias.view().into_dyn()));
        }
        for (l, u) in self.mod_pred.iter().enumerate() {
            visit_fusion(&format!("mod_pred/{}", l), u, &mut out);
        }
        out
    }

    /// Mutable counterpart of [`PcNetwork::visit`], same order.
    pub fn visit_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        for (i, s) in self.down_f.iter_mut().enumerate() {
            out.push((format!("down_f/{}/conv_weight", i), s.conv_weight.view_mut().into_dyn()));
            out.push((format!("down_f/{}/conv_bias", i), s.conv_bias.view_mut().into_dyn()));
            out.push((
                format!("down_f/{}/cutoff_theta", i),
                s.lowpass.theta_mut().view_mut().into_dyn(),
            ));
        }
        for (i, s) in self.down_e.iter_mut().enumerate() {
            out.push((format!("down_e/{}/conv_weight", i), s.conv_weight.view_mut().into_dyn()));
            out.push((format!("down_e/{}/conv_bias", i), s.conv_bias.view_mut().into_dyn()));
            out.push((
                format!("down_e/{}/cutoff_theta", i),
                s.lowpass.theta_mut().view_mut().into_dyn(),
            ));
        }
        for (i, (a, b)) in self
            .merge_alpha
            .iter_mut()
            .zip(self.merge_beta.iter_mut())
            .enumerate()
        {
            out.push((format!("merge/{}/alpha", i + 1), a.view_mut().into_dyn()));
            out.push((format!("merge/{}/beta", i + 1), b.view_mut().into_dyn()));
        }
        for (l, u) in self.mod_error.iter_mut().enumerate() {
            visit_fusion_mut(&format!("mod_error/{}", l), u, &mut out);
        }
        for (l, c) in self.cells.iter_mut().enumerate() {
            out.push((format!("cell/{}/weight", l), c.weight.view_mut().into_dyn()));
            out.push((format!("cell/{}/bias", l), c.bias.view_mut().into_dyn()));
        }
        for (i, u) in self.up.iter_mut().enumerate() {
            out.push((format!("up/{}/interp", i), u.interp.view_mut().into_dyn()));
            out.push((
                format!("up/{}/cutoff_theta", i),
                u.lowpass.theta_mut().view_mut().into_dyn(),
            ));
            out.push((format!("up/{}/map_weight", i), u.map_weight.view_mut().into_dyn()));
            out.push((format!("up/{}/map_bias", i), u.map_bias.view_mut().into_dyn()));
        }
        for (l, u) in self.mod_pred.iter_mut().enumerate() {
            visit_fusion_mut(&format!("mod_pred/{}", l), u, &mut out);
        }
        out
    }

    /// Cutoff parameters grouped by the level their output lives at:
    /// feature/error downsamplers land at their target level, upsampler
    /// low-passes at the level they decode to. Every level owns at least
    /// one group, so `inspect-filters` always prints L rows.
    pub fn cutoffs_by_level(&self) -> Vec<CutoffParams<T>> {
        let mut thetas: Vec<Vec<T>> = vec![Vec::new(); self.config.levels];
        for (i, s) in self.down_f.iter().enumerate() {
            thetas[i + 1].extend(s.lowpass.theta().iter().copied());
        }
        for (i, s) in self.down_e.iter().enumerate() {
            thetas[i + 1].extend(s.lowpass.theta().iter().copied());
        }
        for (i, u) in self.up.iter().enumerate() {
            thetas[i].extend(u.lowpass.theta().iter().copied());
        }
        thetas
            .into_iter()
            .map(|v| {
                CutoffParams::new(Array1::from(v), self.config.taps())
                    .expect("every level has at least one cutoff group")
            })
            .collect()
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> NetVars {
        NetVars {
            down_f: self.down_f.iter().map(|s| s.bind(g, trainable)).collect(),
            down_e: self.down_e.iter().map(|s| s.bind(g, trainable)).collect(),
            merge_alpha: self
                .merge_alpha
                .iter()
                .map(|a| g.leaf(a.clone().into_dyn(), trainable))
                .collect(),
            merge_beta: self
                .merge_beta
                .iter()
                .map(|b| g.leaf(b.clone().into_dyn(), trainable))
                .collect(),
            mod_error: self.mod_error.iter().map(|u| u.bind(g, trainable)).collect(),
            cells: self.cells.iter().map(|c| c.bind(g, trainable)).collect(),
            up: self.up.iter().map(|u| u.bind(g, trainable)).collect(),
            mod_pred: self.mod_pred.iter().map(|u| u.bind(g, trainable)).collect(),
        }
    }
}

fn visit_fusion<'a, T: Real>(
    prefix: &str,
    unit: &'a FusionUnit<T>,
    out: &mut Vec<(String, ArrayViewD<'a, T>)>,
) {
    match unit {
        FusionUnit::Modulate(m) => {
            out.push((format!("{}/sc_weight", prefix), m.conv_sc_w.view().into_dyn()));
            out.push((format!("{}/sc_bias", prefix), m.conv_sc_b.view().into_dyn()));
            out.push((format!("{}/sf_weight", prefix), m.conv_sf_w.view().into_dyn()));
            out.push((format!("{}/sf_bias", prefix), m.conv_sf_b.view().into_dyn()));
            out.push((format!("{}/alpha", prefix), m.alpha.view().into_dyn()));
        }
        FusionUnit::Add { conv_w, conv_b } | FusionUnit::Concat { conv_w, conv_b } => {
            out.push((format!("{}/conv_weight", prefix), conv_w.view().into_dyn()));
            out.push((format!("{}/conv_bias", prefix), conv_b.view().into_dyn()));
        }
    }
}

fn visit_fusion_mut<'a, T: Real>(
    prefix: &str,
    unit: &'a mut FusionUnit<T>,
    out: &mut Vec<(String, ArrayViewMutD<'a, T>)>,
) {
    match unit {
        FusionUnit::Modulate(m) => {
            out.push((format!("{}/sc_weight", prefix), m.conv_sc_w.view_mut().into_dyn()));
            out.push((format!("{}/sc_bias", prefix), m.conv_sc_b.view_mut().into_dyn()));
            out.push((format!("{}/sf_weight", prefix), m.conv_sf_w.view_mut().into_dyn()));
            out.push((format!("{}/sf_bias", prefix), m.conv_sf_b.view_mut().into_dyn()));
            out.push((format!("{}/alpha", prefix), m.alpha.view_mut().into_dyn()));
        }
        FusionUnit::Add { conv_w, conv_b } | FusionUnit::Concat { conv_w, conv_b } => {
            out.push((format!("{}/conv_weight", prefix), conv_w.view_mut().into_dyn()));
            out.push((format!("{}/conv_bias", prefix), conv_b.view_mut().into_dyn()));
        }
    }
}

/// Graph-resident copies of the parameters for one rollout.
pub struct NetVars {
    pub down_f: Vec<DownsampleVars>,
    pub down_e: Vec<DownsampleVars>,
    pub merge_alpha: Vec<Var>,
    pub merge_beta: Vec<Var>,
    pub mod_error: Vec<FusionVars>,
    pub cells: Vec<ConvLstmVars>,
    pub up: Vec<UpsampleVars>,
    pub mod_pred: Vec<FusionVars>,
}

impl NetVars {
    /// Flat list in [`PcNetwork::visit`] order.
    pub fn collect(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for s in &self.down_f {
            s.collect(&mut out);
        }
        for s in &self.down_e {
            s.collect(&mut out);
        }
        for (&a, &b) in self.merge_alpha.iter().zip(self.merge_beta.iter()) {
            out.push(a);
            out.push(b);
        }
        for u in &self.mod_error {
            u.collect(&mut out);
        }
        for c in &self.cells {
            c.collect(&mut out);
        }
        for u in &self.up {
            u.collect(&mut out);
        }
        for u in &self.mod_pred {
            u.collect(&mut out);
        }
        out
    }
}

/// Per-level recurrent memory plus the previous prediction.
#[derive(Debug, Clone, Copy)]
pub struct LevelState {
    pub cell: CellState,
    pub last_pred: Var,
}

/// Rectified split of a prediction error into 2C channels.
pub fn compute_error<T: Real>(
    g: &mut Graph<T>,
    f: Var,
    p_prev: Var,
    mode: ErrorMode,
) -> Result<Var> {
    if g.value(f).shape() != g.value(p_prev).shape() {
        return Err(PcError::Shape(format!(
            "error inputs differ in shape: {:?} vs {:?}",
            g.value(f).shape(),
            g.value(p_prev).shape()
        )));
    }
    let pos_pre = g.sub(f, p_prev)?;
    let neg_pre = g.sub(p_prev, f)?;
    let pos = g.relu(pos_pre);
    let neg = g.relu(neg_pre);
    match mode {
        ErrorMode::RectifiedSplit => g.concat_ch(pos, neg),
        ErrorMode::AbsPair => {
            let abs = g.add(pos, neg)?;
            g.concat_ch(abs, abs)
        }
    }
}

/// `alpha . E_local + beta . E_below`; the caller skips this at level 0.
pub fn merge_errors<T: Real>(
    g: &mut Graph<T>,
    e_local: Var,
    e_below_ds: Var,
    alpha: Var,
    beta: Var,
) -> Result<Var> {
    let a = g.mul_scalar(e_local, alpha)?;
    let b = g.mul_scalar(e_below_ds, beta)?;
    g.add(a, b)
}

/// Everything one step produces.
pub struct StepResult {
    pub f: Vec<Var>,
    pub e: Vec<Var>,
    pub f_out: Vec<Var>,
    pub p: Vec<Var>,
    pub new_states: Vec<LevelState>,
    /// P_0^t, the next-frame prediction.
    pub prediction: Var,
}

impl<T: Real> PcNetwork<T> {
    /// Zero-initialized per-level states (cell memory and last prediction).
    pub fn init_states(&self, g: &mut Graph<T>) -> Vec<LevelState> {
        (0..self.config.levels)
            .map(|l| {
                let (h, w) = self.config.level_dims(l);
                let ch = self.config.channels[l];
                LevelState {
                    cell: zero_state(g, ch, h, w),
                    last_pred: g.zeros(&[ch, h, w]),
                }
            })
            .collect()
    }

    /// Encoder-only pass: f_0 = frame, f_l = downsample(f_{l-1}).
    pub fn encode_frame(&self, g: &mut Graph<T>, vars: &NetVars, frame: Var) -> Result<Vec<Var>> {
        let opts = self.config.resample_opts();
        let mut f = vec![frame];
        for l in 1..self.config.levels {
            let next = downsample(g, &vars.down_f[l - 1], f[l - 1], &opts)?;
            f.push(next);
        }
        Ok(f)
    }

    /// One full step at time `t` (the index is only used in error context).
    pub fn step(
        &self,
        g: &mut Graph<T>,
        vars: &NetVars,
        x: Var,
        states: &[LevelState],
        t: usize,
    ) -> Result<StepResult> {
        let cfg = &self.config;
        if states.len() != cfg.levels {
            return Err(PcError::State(format!(
                "{} level states for {} levels; initialize states first",
                states.len(),
                cfg.levels
            )));
        }
        let got = g.value(x).shape().to_vec();
        if got != [cfg.input.0, cfg.input.1, cfg.input.2] {
            return Err(PcError::Shape(format!(
                "frame shape {:?} does not match configured input {:?}",
                got, cfg.input
            )));
        }
        let opts = cfg.resample_opts();

        // Phase 1: same-step sensory encodings, then rectified errors merged
        // upward, kept separate from the sensory stream.
        let f = self.encode_frame(g, vars, x)?;
        let mut e = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let local = compute_error(g, f[l], states[l].last_pred, cfg.error_mode)?;
            if l == 0 {
                e.push(local);
            } else {
                let below = downsample(g, &vars.down_e[l - 1], e[l - 1], &opts)?;
                let merged = merge_errors(
                    g,
                    local,
                    below,
                    vars.merge_alpha[l - 1],
                    vars.merge_beta[l - 1],
                )?;
                e.push(merged);
            }
        }

        // Phase 2: recurrent update on the fused input.
        let mut f_out = Vec::with_capacity(cfg.levels);
        let mut new_states: Vec<LevelState> = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let f_in = mod_error(g, &vars.mod_error[l], f[l], e[l])?;
            let (out, cell) = conv_lstm_step(g, &vars.cells[l], f_in, &states[l].cell)?;
            f_out.push(out);
            new_states.push(LevelState {
                cell,
                last_pred: out, // placeholder, replaced in phase 3
            });
        }

        // Phase 3: top-down predictions.
        let mut p = vec![Var(0); cfg.levels];
        p[cfg.levels - 1] = f_out[cfg.levels - 1];
        for l in (0..cfg.levels - 1).rev() {
            let us = upsample(g, &vars.up[l], p[l + 1], &opts)?;
            p[l] = mod_pred(g, &vars.mod_pred[l], us, f_out[l])?;
        }
        for l in 0..cfg.levels {
            if !g.value(p[l]).iter().all(|v| v.is_finite()) {
                return Err(PcError::Numeric(format!(
                    "non-finite prediction at level {}, timestep {}",
                    l, t
                )));
            }
            new_states[l].last_pred = p[l];
        }

        Ok(StepResult {
            prediction: p[0],
            f,
            e,
            f_out,
            p,
            new_states,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Every step consumes a ground-truth frame.
    TeacherForced,
    /// Steps T1.. consume the clamped previous prediction.
    ClosedLoop,
}

/// Scalar error norms per (timestep, level): ||E_l^t||_2.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub error_norms: Vec<Vec<f64>>, // [t][l]
}

impl Diagnostics {
    /// `level,t,error_norm` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,t,error_norm\n");
        for (t, row) in self.error_norms.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", l, t, v));
            }
        }
        out
    }
}

/// Everything a rollout caches for losses, metrics, and provenance checks.
pub struct Rollout {
    pub t1: usize,
    pub t2: usize,
    /// Number of steps taken: T1 + T2 - 1.
    pub steps: usize,
    /// P_0^t for each step t (prediction of frame t+1).
    pub predictions: Vec<Var>,
    /// P_l^t for each step t and level l.
    pub pred_levels: Vec<Vec<Var>>,
    /// In-step encodings f_l^t of whatever frame the step consumed.
    pub step_f: Vec<Vec<Var>>,
    /// The frame each step consumed (ground truth or clamped feedback).
    pub consumed: Vec<Var>,
    /// Ground-truth encodings for t = 0..T-1.
    pub f_gt: Vec<Vec<Var>>,
    /// Predicted-frame encodings for t = T1..T-1 (empty when T2 = 0).
    pub f_hat: Vec<Vec<Var>>,
    pub diagnostics: Diagnostics,
}

/// Provenance of one cached sensory encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceRecord {
    pub level: usize,
    pub timestep: usize,
    /// Time index of the input frame the encoding derives from.
    pub source_frame: usize,
    /// True when re-encoding the consumed frame reproduces the cached
    /// value bit for bit.
    pub verified: bool,
}

impl<T: Real> PcNetwork<T> {
    /// Run T1 teacher-forced steps and T2 - 1 closed-loop steps (in
    /// `ClosedLoop` mode), caching everything the losses need.
    pub fn rollout(
        &self,
        g: &mut Graph<T>,
        vars: &NetVars,
        seq: &SequenceBatch<T>,
        mode: RolloutMode,
    ) -> Result<Rollout> {
        let cfg = &self.config;
        let t1 = cfg.t1;
        let t2 = cfg.t2;
        let total = cfg.total_t();
        if seq.len() < total {
            return Err(PcError::InvalidArgument(format!(
                "sequence has {} frames, need T1 + T2 = {}",
                seq.len(),
                total
            )));
        }
        if mode == RolloutMode::ClosedLoop && t2 < 1 {
            return Err(PcError::InvalidArgument(
                "closed-loop rollout requires T2 >= 1".into(),
            ));
        }
        let steps = total - 1;
        let mut states = self.init_states(g);
        let mut predictions = Vec::with_capacity(steps);
        let mut pred_levels = Vec::with_capacity(steps);
        let mut step_f = Vec::with_capacity(steps);
        let mut consumed = Vec::with_capacity(steps);
        let mut diagnostics = Diagnostics::default();
        for t in 0..steps {
            let x = if t < t1 || mode == RolloutMode::TeacherForced {
                g.leaf(seq.frames[t].clone().into_dyn(), false)
            } else {
                g.clamp01(predictions[t - 1])
            };
            let out = self.step(g, vars, x, &states, t)?;
            states = out.new_states;
            diagnostics.error_norms.push(
                out.e
                    .iter()
                    .map(|&e| g.value(e).iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt())
                    .collect(),
            );
            predictions.push(out.prediction);
            pred_levels.push(out.p);
            step_f.push(out.f);
            consumed.push(x);
        }

        // Ground-truth encodings: in-step values where the step consumed
        // ground truth, encoder-only passes everywhere else (closed-loop
        // steps and the final frame T-1, which no step consumes).
        let mut f_gt: Vec<Vec<Var>> = Vec::with_capacity(total);
        for t in 0..total {
            let in_step = t < steps && (t < t1 || mode == RolloutMode::TeacherForced);
            if in_step {
                f_gt.push(step_f[t].clone());
            } else {
                let frame = g.leaf(seq.frames[t].clone().into_dyn(), false);
                f_gt.push(self.encode_frame(g, vars, frame)?);
            }
        }

        // Predicted-frame encodings for the horizon, through the same
        // encoder stages.
        let mut f_hat: Vec<Vec<Var>> = Vec::new();
        if t2 > 0 {
            for t in t1..total {
                let in_step = t < steps && mode == RolloutMode::ClosedLoop;
                if in_step {
                    f_hat.push(step_f[t].clone());
                } else {
                    let fed = g.clamp01(predictions[t - 1]);
                    f_hat.push(self.encode_frame(g, vars, fed)?);
                }
            }
        }

        Ok(Rollout {
            t1,
            t2,
            steps,
            predictions,
            pred_levels,
            step_f,
            consumed,
            f_gt,
            f_hat,
            diagnostics,
        })
    }

    /// Re-encode the frame consumed at `timestep` and compare against the
    /// cached encoding: the corrected wiring means f_l^t always derives
    /// from the step's own input frame.
    pub fn trace_dependency(
        &self,
        g: &mut Graph<T>,
        vars: &NetVars,
        rollout: &Rollout,
        level: usize,
        timestep: usize,
    ) -> Result<ProvenanceRecord> {
        if timestep >= rollout.steps || rollout.diagnostics.error_norms.len() != rollout.steps {
            return Err(PcError::State(format!(
                "no diagnostics for timestep {} (rollout has {} steps)",
                timestep, rollout.steps
            )));
        }
        if level >= self.config.levels {
            return Err(PcError::State(format!(
                "level {} out of range ({} levels)",
                level, self.config.levels
            )));
        }
        let frame = g.leaf(g.value(rollout.consumed[timestep]).clone(), false);
        let re_encoded = self.encode_frame(g, vars, frame)?;
        let verified = g.value(re_encoded[level]) == g.value(rollout.step_f[timestep][level]);
        Ok(ProvenanceRecord {
            level,
            timestep,
            source_frame: timestep,
            verified,
        })
    }

    /// Inference helper: consume `context` frames, then roll the model
    /// closed-loop for `horizon` more frames. Returns clamped predictions
    /// of frames context.len() .. context.len() + horizon.
    pub fn predict_frames(
        &self,
        context: &[Array3<T>],
        horizon: usize,
    ) -> Result<Vec<Array3<T>>> {
        if context.is_empty() {
            return Err(PcError::InvalidArgument(
                "prediction needs at least one context frame".into(),
            ));
        }
        if horizon == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(crate::tensor::GradMode::Eval);
        let vars = self.bind(&mut g, false);
        let mut states = self.init_states(&mut g);
        let mut last_pred = None;
        for (t, frame) in context.iter().enumerate() {
            let x = g.leaf(frame.clone().into_dyn(), false);
            let out = self.step(&mut g, &vars, x, &states, t)?;
            states = out.new_states;
            last_pred = Some(out.prediction);
        }
        let mut outputs = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let pred = last_pred.expect("context is non-empty");
            let clamped = g.clamp01(pred);
            outputs.push(
                g.value(clamped)
                    .clone()
                    .into_dimensionality::<ndarray::Ix3>()
                    .expect("frames are (C, H, W)"),
            );
            if k + 1 < horizon {
                let out = self.step(&mut g, &vars, clamped, &states, context.len() + k)?;
                states = out.new_states;
                last_pred = Some(out.prediction);
            }
        }
        Ok(outputs)
    }
}
