//! Predictive-coding video frame prediction with anti-aliased, learnable
//! resampling.
//!
//! The model is a hierarchy of predictive levels. Each time step runs three
//! phases: a bottom-up pass encodes the current frame and merges rectified
//! prediction errors upward, a recurrent pass updates each level's ConvLSTM
//! memory on the modulation-fused input, and a top-down pass decodes
//! predictions through anti-aliased upsampling. Downsampling and upsampling
//! both end in Hamming-windowed sinc low-pass filters whose cutoff ratios
//! are learned per channel.

pub mod data;
pub mod error;
pub mod filter_design;
pub mod gradcheck;
mod init;
pub mod loss;
pub mod metrics;
pub mod modulation;
pub mod network;
pub mod recurrent;
pub mod resample;
pub mod tensor;
pub mod train;

pub use error::{PcError, Result};
pub use tensor::{GradMode, Graph, Real, Var};
