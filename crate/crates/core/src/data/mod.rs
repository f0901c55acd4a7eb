//! Data plumbing: synthetic scene generation, PNG sequence I/O, and the
//! checkpoint archive format.

mod checkpoint;
mod io;
mod synth;

pub use checkpoint::{Archive, ArchiveEntry, MAGIC};
pub use io::{
    load_sequence_dir, save_frame_png, save_sequence_dir, side_by_side_grid, SequenceBatch,
};
pub use synth::{gen_bouncing_shapes, render_sequence, Shape, ShapeKind, SyntheticSceneSpec};

use rand_chacha::ChaCha8Rng;

/// The one RNG used everywhere; ChaCha keeps runs reproducible across
/// platforms.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
