//! Bouncing-shapes generator: a deterministic, desk-scale stand-in for the
//! natural-video corpora the model is meant for.

use super::io::SequenceBatch;
use super::rng_from_seed;
use crate::error::{PcError, Result};
use crate::tensor::Real;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disc,
}

/// One moving sprite: constant velocity, elastic reflection at the borders.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub kind: ShapeKind,
    pub size: usize,
    pub intensity: f64,
    pub pos: (f64, f64), // (y, x) of the top-left corner
    pub vel: (f64, f64), // (dy, dx) per frame
}

fn default_sizes() -> (usize, usize) {
    (8, 14)
}

/// Deterministic scene description: the same spec always renders the same
/// sequence, bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub n_shapes: usize,
    /// Kinds drawn from uniformly; one entry pins every shape to that kind.
    pub kinds: Vec<ShapeKind>,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub velocity_min: f64,
    pub velocity_max: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    #[serde(default = "default_size_min")]
    pub size_min: usize,
    #[serde(default = "default_size_max")]
    pub size_max: usize,
}

fn default_size_min() -> usize {
    default_sizes().0
}

fn default_size_max() -> usize {
    default_sizes().1
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_shapes == 0 {
            return Err(PcError::InvalidArgument(
                "scene needs at least one shape".into(),
            ));
        }
        if self.height < 16 || self.width < 16 {
            return Err(PcError::InvalidArgument(format!(
                "scene must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.frames < 2 {
            return Err(PcError::InvalidArgument(
                "scene needs at least two frames".into(),
            ));
        }
        if self.kinds.is_empty() {
            return Err(PcError::InvalidArgument("no shape kinds given".into()));
        }
        if self.size_min == 0 || self.size_max < self.size_min {
            return Err(PcError::InvalidArgument(format!(
                "bad size range {}..{}",
                self.size_min, self.size_max
            )));
        }
        Ok(())
    }
}

fn reflect(p: f64, v: f64, max: f64) -> (f64, f64) {
    let mut p = p;
    let mut v = v;
    // A shape never travels more than a few spans per frame, so the loop
    // settles immediately in practice.
    loop {
        if p < 0.0 {
            p = -p;
            v = -v;
        } else if p > max {
            p = 2.0 * max - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

fn draw<T: Real>(frame: &mut Array3<T>, shape: &Shape) {
    let (_, h, w) = frame.dim();
    let top = shape.pos.0.round() as isize;
    let left = shape.pos.1.round() as isize;
    let s = shape.size as isize;
    let val = T::cast(shape.intensity);
    match shape.kind {
        ShapeKind::Square => {
            for i in top.max(0)..(top + s).min(h as isize) {
                for j in left.max(0)..(left + s).min(w as isize) {
                    let p = &mut frame[(0, i as usize, j as usize)];
                    if *p < val {
                        *p = val;
                    }
                }
            }
        }
        ShapeKind::Disc => {
            let r = shape.size as f64 / 2.0;
            let cy = shape.pos.0 + r;
            let cx = shape.pos.1 + r;
            for i in top.max(0)..(top + s).min(h as isize) {
                for j in left.max(0)..(left + s).min(w as isize) {
                    let dy = i as f64 + 0.5 - cy;
                    let dx = j as f64 + 0.5 - cx;
                    if dy * dy + dx * dx <= r * r {
                        let p = &mut frame[(0, i as usize, j as usize)];
                        if *p < val {
                            *p = val;
                        }
                    }
                }
            }
        }
    }
}

/// Render explicit shapes over `frames` steps on a black background.
pub fn render_sequence<T: Real>(
    shapes: &[Shape],
    height: usize,
    width: usize,
    frames: usize,
) -> SequenceBatch<T> {
    let mut moving: Vec<Shape> = shapes.to_vec();
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut frame = Array3::<T>::zeros((1, height, width));
        for s in &moving {
            draw(&mut frame, s);
        }
        out.push(frame);
        for s in moving.iter_mut() {
            let max_y = (height - s.size.min(height)) as f64;
            let max_x = (width - s.size.min(width)) as f64;
            let (py, vy) = reflect(s.pos.0 + s.vel.0, s.vel.0, max_y);
            let (px, vx) = reflect(s.pos.1 + s.vel.1, s.vel.1, max_x);
            s.pos = (py, px);
            s.vel = (vy, vx);
        }
    }
    SequenceBatch::new(out).expect("rendered frames are consistent")
}

/// Sample a scene from the spec and render it. Pixels are in [0, 1].
pub fn gen_bouncing_shapes<T: Real>(spec: &SyntheticSceneSpec) -> Result<SequenceBatch<T>> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let mut shapes = Vec::with_capacity(spec.n_shapes);
    for _ in 0..spec.n_shapes {
        let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
        let size = rng.random_range(spec.size_min..=spec.size_max.min(spec.height.min(spec.width) / 2));
        let intensity = rng.random_range(spec.intensity_min..=spec.intensity_max);
        let pos = (
            rng.random_range(0.0..=(spec.height - size) as f64),
            rng.random_range(0.0..=(spec.width - size) as f64),
        );
        let mut vel = (
            rng.random_range(spec.velocity_min..=spec.velocity_max),
            rng.random_range(spec.velocity_min..=spec.velocity_max),
        );
        if rng.random_bool(0.5) {
            vel.0 = -vel.0;
        }
        if rng.random_bool(0.5) {
            vel.1 = -vel.1;
        }
        shapes.push(Shape {
            kind,
            size,
            intensity,
            pos,
            vel,
        });
    }
    Ok(render_sequence(&shapes, spec.height, spec.width, spec.frames))
}
