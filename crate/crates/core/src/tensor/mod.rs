//! Reverse-mode automatic differentiation over dense `ndarray` tensors.
//!
//! The whole model is a fixed dataflow per time step, so the engine is a
//! plain arena tape: builder methods evaluate eagerly and record one node
//! per operation, `backward` walks the arena in reverse. Values are stored
//! channel-first (C, H, W). The engine is generic over [`Real`] so the same
//! code runs in f32 for training and f64 for finite-difference checks.

mod filterbank;
mod graph;
mod ops;

pub use filterbank::{hamming, lowpass_taps, windowed_sinc};
pub use graph::{FilterLayout, GradMode, Graph, Var};

pub(crate) use ops::zero_interleave2 as zero_interleave_array;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type the engine computes in. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Dtype tag used in checkpoint archives.
    const DTYPE: &'static str;
    /// Size of one element in bytes.
    const BYTES: usize;

    /// Lossy conversion from f64 (the engine computes constants in f64).
    fn cast(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn cast(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn cast(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}
