//! Modulation-based signal fusion.
//!
//! Two signals are never concatenated or added directly: the auxiliary
//! signal is convolved into a scaling matrix (logistic, in (0, 1)) and a
//! shifting matrix (tanh, in (-1, 1)) which then act pointwise on the
//! primary signal:
//!
//! ```text
//! y = alpha * logistic(f(x2; theta_sc)) . x1 + tanh(f(x2; theta_sf))
//! ```
//!
//! The convolutions start at zero and alpha at 2, so a fresh unit is the
//! identity on x1: 2 * 0.5 * x1 + 0. The primary path has no weight matrix,
//! which keeps its gradient bounded by alpha regardless of conv scale.
//!
//! Point-wise addition and plain concatenation remain available as the
//! ablation fusion modes.

use crate::error::{PcError, Result};
use crate::init::kaiming_uniform;
use crate::tensor::{Graph, Real, Var};
use ndarray::{Array1, Array4};
use rand::Rng;

/// Initial value of the learnable amplification scalar.
pub const ALPHA_INIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Modulate,
    Add,
    Concat,
}

/// Learned scaling/shifting fusion of an auxiliary signal into a primary one.
#[derive(Debug, Clone)]
pub struct ModulationUnit<T: Real> {
    pub conv_sc_w: Array4<T>, // (C_primary, C_aux, 3, 3)
    pub conv_sc_b: Array1<T>,
    pub conv_sf_w: Array4<T>,
    pub conv_sf_b: Array1<T>,
    pub alpha: Array1<T>, // single element
}

impl<T: Real> ModulationUnit<T> {
    /// Zero-initialized convolutions and alpha = 2: exact identity on x1.
    pub fn identity_init(c_primary: usize, c_aux: usize) -> Self {
        ModulationUnit {
            conv_sc_w: Array4::zeros((c_primary, c_aux, 3, 3)),
            conv_sc_b: Array1::zeros(c_primary),
            conv_sf_w: Array4::zeros((c_primary, c_aux, 3, 3)),
            conv_sf_b: Array1::zeros(c_primary),
            alpha: Array1::from_elem(1, T::cast(ALPHA_INIT)),
        }
    }

    pub fn c_primary(&self) -> usize {
        self.conv_sc_w.dim().0
    }

    pub fn c_aux(&self) -> usize {
        self.conv_sc_w.dim().1
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ModulationVars {
        ModulationVars {
            sc_w: g.leaf(self.conv_sc_w.clone().into_dyn(), trainable),
            sc_b: g.leaf(self.conv_sc_b.clone().into_dyn(), trainable),
            sf_w: g.leaf(self.conv_sf_w.clone().into_dyn(), trainable),
            sf_b: g.leaf(self.conv_sf_b.clone().into_dyn(), trainable),
            alpha: g.leaf(self.alpha.clone().into_dyn(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModulationVars {
    pub sc_w: Var,
    pub sc_b: Var,
    pub sf_w: Var,
    pub sf_b: Var,
    pub alpha: Var,
}

impl ModulationVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([self.sc_w, self.sc_b, self.sf_w, self.sf_b, self.alpha]);
    }
}

fn check_spatial<T: Real>(g: &Graph<T>, x1: Var, x2: Var) -> Result<()> {
    let s1 = g.value(x1).shape().to_vec();
    let s2 = g.value(x2).shape().to_vec();
    if s1.len() != 3 || s2.len() != 3 || s1[1..] != s2[1..] {
        return Err(PcError::Shape(format!(
            "fusion inputs must share spatial dims, got {:?} vs {:?}",
            s1, s2
        )));
    }
    Ok(())
}

/// `y = alpha . logistic(conv_sc(x2)) . x1 + tanh(conv_sf(x2))`.
pub fn modulate<T: Real>(
    g: &mut Graph<T>,
    vars: &ModulationVars,
    x1: Var,
    x2: Var,
) -> Result<Var> {
    check_spatial(g, x1, x2)?;
    let sc = g.conv2d(x2, vars.sc_w, Some(vars.sc_b), 1, 1)?;
    let m_sc = g.logistic(sc);
    let sf = g.conv2d(x2, vars.sf_w, Some(vars.sf_b), 1, 1)?;
    let m_sf = g.tanh_of(sf);
    let scaled = g.mul(m_sc, x1)?;
    let amplified = g.mul_scalar(scaled, vars.alpha)?;
    g.add(amplified, m_sf)
}

/// One fusion slot of the network, in the configured mode.
#[derive(Debug, Clone)]
pub enum FusionUnit<T: Real> {
    Modulate(ModulationUnit<T>),
    /// Point-wise addition with an extra convolutional unit on the aux path.
    Add {
        conv_w: Array4<T>,
        conv_b: Array1<T>,
    },
    /// Channel concatenation followed by a convolution back to C_primary.
    Concat {
        conv_w: Array4<T>,
        conv_b: Array1<T>,
    },
}

impl<T: Real> FusionUnit<T> {
    pub fn init<R: Rng>(kind: FusionKind, c_primary: usize, c_aux: usize, rng: &mut R) -> Self {
        match kind {
            FusionKind::Modulate => {
                FusionUnit::Modulate(ModulationUnit::identity_init(c_primary, c_aux))
            }
            FusionKind::Add => FusionUnit::Add {
                conv_w: kaiming_uniform::<T, _>(&[c_primary, c_aux, 3, 3], c_aux * 9, rng)
                    .into_dimensionality()
                    .expect("static shape"),
                conv_b: Array1::zeros(c_primary),
            },
            FusionKind::Concat => FusionUnit::Concat {
                conv_w: kaiming_uniform::<T, _>(
                    &[c_primary, c_primary + c_aux, 3, 3],
                    (c_primary + c_aux) * 9,
                    rng,
                )
                .into_dimensionality()
                .expect("static shape"),
                conv_b: Array1::zeros(c_primary),
            },
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> FusionVars {
        match self {
            FusionUnit::Modulate(m) => FusionVars::Modulate(m.bind(g, trainable)),
            FusionUnit::Add { conv_w, conv_b } => FusionVars::Add {
                w: g.leaf(conv_w.clone().into_dyn(), trainable),
                b: g.leaf(conv_b.clone().into_dyn(), trainable),
            },
            FusionUnit::Concat { conv_w, conv_b } => FusionVars::Concat {
                w: g.leaf(conv_w.clone().into_dyn(), trainable),
                b: g.leaf(conv_b.clone().into_dyn(), trainable),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum FusionVars {
    Modulate(ModulationVars),
    Add { w: Var, b: Var },
    Concat { w: Var, b: Var },
}

impl FusionVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        match self {
            FusionVars::Modulate(m) => m.collect(out),
            FusionVars::Add { w, b } | FusionVars::Concat { w, b } => out.extend([*w, *b]),
        }
    }
}

pub fn fuse<T: Real>(g: &mut Graph<T>, vars: &FusionVars, x1: Var, x2: Var) -> Result<Var> {
    match vars {
        FusionVars::Modulate(m) => modulate(g, m, x1, x2),
        FusionVars::Add { w, b } => {
            check_spatial(g, x1, x2)?;
            let conv = g.conv2d(x2, *w, Some(*b), 1, 1)?;
            g.add(x1, conv)
        }
        FusionVars::Concat { w, b } => {
            check_spatial(g, x1, x2)?;
            let cat = g.concat_ch(x1, x2)?;
            g.conv2d(cat, *w, Some(*b), 1, 1)
        }
    }
}

/// Pre-processing slot: the sensory input is the primary signal, the merged
/// prediction error (2C channels) the auxiliary one.
pub fn mod_error<T: Real>(
    g: &mut Graph<T>,
    vars: &FusionVars,
    f: Var,
    e: Var,
) -> Result<Var> {
    let fc = g.value(f).shape()[0];
    let ec = g.value(e).shape()[0];
    if ec != 2 * fc {
        return Err(PcError::Shape(format!(
            "error input must carry 2x{} channels, got {}",
            fc, ec
        )));
    }
    fuse(g, vars, f, e)
}

/// Post-processing slot: the upsampled higher-level prediction is primary,
/// the recurrent output auxiliary.
pub fn mod_pred<T: Real>(
    g: &mut Graph<T>,
    vars: &FusionVars,
    p_higher_us: Var,
    f_out: Var,
) -> Result<Var> {
    fuse(g, vars, p_higher_us, f_out)
}
