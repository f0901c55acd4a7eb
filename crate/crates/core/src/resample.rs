//! The downsampling and upsampling artifacts.
//!
//! Downsampling is feature extraction (3x3 conv, leaky rectifier) followed
//! by a depthwise anti-aliasing low-pass built from learnable cutoffs,
//! decimating by 2. Upsampling raises the sampling rate without inventing
//! content: interleave zeros, interpolate with a 7x7 depthwise kernel whose
//! initialization realizes inverse-distance interpolation, low-pass, then a
//! 1x1 channel reconstruction.

use crate::error::{PcError, Result};
use crate::filter_design::{CutoffParams, FilterLayout, RESHAPE_TAPS, SEPARABLE_TAPS};
use crate::init::kaiming_uniform;
use crate::tensor::{Graph, Real, Var};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;

/// Slope of the leaky rectifier after the feature convolution.
pub const LEAKY_SLOPE: f64 = 0.1;

/// How 2x upsampling is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleKind {
    /// Zero interleaving + learned 7x7 depthwise interpolation (default).
    Interleave,
    /// Fixed bilinear resize (ablation).
    Bilinear,
}

/// Shared resampling switches (ablations and kernel layout).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleOpts {
    /// When false the anti-aliasing low-pass is skipped everywhere:
    /// downsampling decimates directly, upsampling stops after interpolation.
    pub filter_enabled: bool,
    pub layout: FilterLayout,
    pub upsample: UpsampleKind,
}

impl Default for ResampleOpts {
    fn default() -> Self {
        ResampleOpts {
            filter_enabled: true,
            layout: FilterLayout::Reshape,
            upsample: UpsampleKind::Interleave,
        }
    }
}

impl ResampleOpts {
    pub fn taps(&self) -> usize {
        match self.layout {
            FilterLayout::Reshape => RESHAPE_TAPS,
            FilterLayout::Separable => SEPARABLE_TAPS,
        }
    }
}

/// Inverse-distance 7x7 interpolation kernel for zero-interleaved input.
///
/// Offsets are indexed -3..3 on both axes. Each parity class serves one
/// output phase of the 2x grid and its weights sum to 1:
/// odd/odd offsets interpolate the all-zero phase from the 16 diagonal
/// neighbors, even/odd and odd/even handle the two half phases from 12
/// neighbors each, and the even/even class is a center one-hot so original
/// samples pass through untouched.
pub fn init_interp_kernel() -> Array2<f64> {
    let inv = |dy: i32, dx: i32| 1.0 / (((dy * dy + dx * dx) as f64).sqrt());
    let mut norm_oo = 0.0;
    let mut norm_eo = 0.0;
    let mut norm_oe = 0.0;
    for dy in -3i32..=3 {
        for dx in -3i32..=3 {
            match (dy.rem_euclid(2) == 1, dx.rem_euclid(2) == 1) {
                (true, true) => norm_oo += inv(dy, dx),
                (false, true) => norm_eo += inv(dy, dx),
                (true, false) => norm_oe += inv(dy, dx),
                (false, false) => {}
            }
        }
    }
    let mut kern = Array2::<f64>::zeros((7, 7));
    for dy in -3i32..=3 {
        for dx in -3i32..=3 {
            let v = match (dy.rem_euclid(2) == 1, dx.rem_euclid(2) == 1) {
                (true, true) => inv(dy, dx) / norm_oo,
                (false, true) => inv(dy, dx) / norm_eo,
                (true, false) => inv(dy, dx) / norm_oe,
                (false, false) => {
                    if dy == 0 && dx == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            kern[((dy + 3) as usize, (dx + 3) as usize)] = v;
        }
    }
    kern
}

/// Interleave m-1 zeros between samples; the original sample of each 2x2
/// box lands bottom-right, at output (2i+1, 2j+1). Only m = 2 is supported.
pub fn zero_interleave<T: Real>(f: &Array3<T>, m: usize) -> Result<Array3<T>> {
    if m != 2 {
        return Err(PcError::InvalidArgument(format!(
            "unsupported upsampling factor {} (only 2)",
            m
        )));
    }
    Ok(crate::tensor::zero_interleave_array(&f.view()))
}

/// Feature extraction + anti-aliased stride-2 decimation.
#[derive(Debug, Clone)]
pub struct DownsampleStage<T: Real> {
    pub conv_weight: Array4<T>, // (C_out, C_in, 3, 3)
    pub conv_bias: Array1<T>,   // (C_out,)
    pub lowpass: CutoffParams<T>,
}

impl<T: Real> DownsampleStage<T> {
    pub fn init<R: Rng>(c_in: usize, c_out: usize, taps: usize, rng: &mut R) -> Result<Self> {
        let w = kaiming_uniform::<T, _>(&[c_out, c_in, 3, 3], c_in * 9, rng)
            .into_dimensionality()
            .expect("static shape");
        Ok(DownsampleStage {
            conv_weight: w,
            conv_bias: Array1::zeros(c_out),
            lowpass: CutoffParams::init(c_out, taps)?,
        })
    }

    pub fn zeroed(c_in: usize, c_out: usize, taps: usize) -> Result<Self> {
        Ok(DownsampleStage {
            conv_weight: Array4::zeros((c_out, c_in, 3, 3)),
            conv_bias: Array1::zeros(c_out),
            lowpass: CutoffParams::init(c_out, taps)?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.conv_weight.dim().1
    }

    pub fn c_out(&self) -> usize {
        self.conv_weight.dim().0
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> DownsampleVars {
        DownsampleVars {
            conv_w: g.leaf(self.conv_weight.clone().into_dyn(), trainable),
            conv_b: g.leaf(self.conv_bias.clone().into_dyn(), trainable),
            theta: g.leaf(self.lowpass.theta().clone().into_dyn(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DownsampleVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub theta: Var,
}

impl DownsampleVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([self.conv_w, self.conv_b, self.theta]);
    }
}

/// Full downsampling artifact: halves both spatial dims.
pub fn downsample<T: Real>(
    g: &mut Graph<T>,
    vars: &DownsampleVars,
    x: Var,
    opts: &ResampleOpts,
) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(PcError::Shape(format!(
            "downsample expects (C, H, W), got {:?}",
            shape
        )));
    }
    if shape[1] % 2 != 0 || shape[2] % 2 != 0 {
        return Err(PcError::Shape(format!(
            "downsample needs even spatial dims, got {}x{}",
            shape[1], shape[2]
        )));
    }
    let feat = g.conv2d(x, vars.conv_w, Some(vars.conv_b), 1, 1)?;
    let act = g.leaky_relu(feat, LEAKY_SLOPE);
    lowpass_decimate(g, vars.theta, act, opts)
}

/// The anti-aliasing + decimation sub-step alone (no feature conv).
pub fn lowpass_decimate<T: Real>(
    g: &mut Graph<T>,
    theta: Var,
    x: Var,
    opts: &ResampleOpts,
) -> Result<Var> {
    if opts.filter_enabled {
        let kern = g.filter_bank(theta, opts.taps(), opts.layout)?;
        g.depthwise(x, kern, 2, 2)
    } else {
        g.subsample2(x)
    }
}

/// Zero interleave + interpolation + low-pass + channel reconstruction.
#[derive(Debug, Clone)]
pub struct UpsampleStage<T: Real> {
    pub interp: Array3<T>, // (C_in, 7, 7) depthwise
    pub lowpass: CutoffParams<T>,
    pub map_weight: Array4<T>, // (C_out, C_in, 1, 1)
    pub map_bias: Array1<T>,
}

impl<T: Real> UpsampleStage<T> {
    /// `special_init` selects the inverse-distance interpolation kernel;
    /// otherwise the 7x7 weights start Kaiming-uniform (the ablation).
    pub fn init<R: Rng>(
        c_in: usize,
        c_out: usize,
        taps: usize,
        special_init: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let interp = if special_init {
            let base = init_interp_kernel();
            Array3::from_shape_fn((c_in, 7, 7), |(_, i, j)| T::cast(base[(i, j)]))
        } else {
            kaiming_uniform::<T, _>(&[c_in, 7, 7], 49, rng)
                .into_dimensionality()
                .expect("static shape")
        };
        let map = kaiming_uniform::<T, _>(&[c_out, c_in, 1, 1], c_in, rng)
            .into_dimensionality()
            .expect("static shape");
        Ok(UpsampleStage {
            interp,
            lowpass: CutoffParams::init(c_in, taps)?,
            map_weight: map,
            map_bias: Array1::zeros(c_out),
        })
    }

    pub fn zeroed(c_in: usize, c_out: usize, taps: usize) -> Result<Self> {
        Ok(UpsampleStage {
            interp: Array3::zeros((c_in, 7, 7)),
            lowpass: CutoffParams::init(c_in, taps)?,
            map_weight: Array4::zeros((c_out, c_in, 1, 1)),
            map_bias: Array1::zeros(c_out),
        })
    }

    pub fn c_in(&self) -> usize {
        self.map_weight.dim().1
    }

    pub fn c_out(&self) -> usize {
        self.map_weight.dim().0
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> UpsampleVars {
        UpsampleVars {
            interp: g.leaf(self.interp.clone().into_dyn(), trainable),
            theta: g.leaf(self.lowpass.theta().clone().into_dyn(), trainable),
            map_w: g.leaf(self.map_weight.clone().into_dyn(), trainable),
            map_b: g.leaf(self.map_bias.clone().into_dyn(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpsampleVars {
    pub interp: Var,
    pub theta: Var,
    pub map_w: Var,
    pub map_b: Var,
}

impl UpsampleVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([self.interp, self.theta, self.map_w, self.map_b]);
    }
}

/// Full upsampling artifact: doubles both spatial dims.
pub fn upsample<T: Real>(
    g: &mut Graph<T>,
    vars: &UpsampleVars,
    x: Var,
    opts: &ResampleOpts,
) -> Result<Var> {
    let interpolated = match opts.upsample {
        UpsampleKind::Interleave => {
            let z = g.zero_interleave2(x)?;
            g.depthwise(z, vars.interp, 1, 3)?
        }
        UpsampleKind::Bilinear => g.bilinear_up2(x)?,
    };
    let filtered = if opts.filter_enabled {
        let kern = g.filter_bank(vars.theta, opts.taps(), opts.layout)?;
        g.depthwise(interpolated, kern, 1, 2)?
    } else {
        interpolated
    };
    g.conv2d(filtered, vars.map_w, Some(vars.map_b), 1, 0)
}
