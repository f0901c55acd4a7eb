//! Frame sequences and 8-bit PNG interchange.

use crate::error::{PcError, Result};
use crate::tensor::Real;
use ndarray::Array3;
use std::path::Path;

/// Ordered ground-truth frames x_0..x_{T-1}, channel-first, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T: Real> {
    pub frames: Vec<Array3<T>>,
}

impl<T: Real> SequenceBatch<T> {
    pub fn new(frames: Vec<Array3<T>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| PcError::InvalidArgument("sequence has no frames".into()))?
            .dim();
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != first {
                return Err(PcError::Format(format!(
                    "frame {} has shape {:?}, expected {:?}",
                    t,
                    f.dim(),
                    first
                )));
            }
        }
        Ok(SequenceBatch { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (channels, height, width) of every frame.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.frames[0].dim()
    }
}

fn to_unit(v: u8) -> f64 {
    v as f64 / 255.0
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load a directory of PNG frames in lexicographic file-name order.
/// 8-bit grayscale maps to one channel, RGB to three.
pub fn load_sequence_dir<T: Real>(dir: &Path) -> Result<SequenceBatch<T>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| PcError::Io(format!("{}: {}", dir.display(), e)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(PcError::InvalidArgument(format!(
            "{}: no PNG frames found",
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(names.len());
    for path in &names {
        let img = image::open(path)
            .map_err(|e| PcError::Io(format!("{}: {}", path.display(), e)))?;
        let frame = match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Array3::from_shape_fn((1, h as usize, w as usize), |(_, i, j)| {
                    T::cast(to_unit(g.get_pixel(j as u32, i as u32)[0]))
                })
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
                    T::cast(to_unit(rgb.get_pixel(j as u32, i as u32)[c]))
                })
            }
        };
        frames.push(frame);
    }
    let batch = SequenceBatch::new(frames)?;
    Ok(batch)
}

/// Write one frame as 8-bit PNG (grayscale for 1 channel, RGB for 3).
pub fn save_frame_png<T: Real>(frame: &Array3<T>, path: &Path) -> Result<()> {
    let (c, h, w) = frame.dim();
    let err = |e: image::ImageError| PcError::Io(format!("{}: {}", path.display(), e));
    match c {
        1 => {
            let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([to_byte(frame[(0, y as usize, x as usize)].to_f64())])
            });
            img.save(path).map_err(err)
        }
        3 => {
            let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb([
                    to_byte(frame[(0, y as usize, x as usize)].to_f64()),
                    to_byte(frame[(1, y as usize, x as usize)].to_f64()),
                    to_byte(frame[(2, y as usize, x as usize)].to_f64()),
                ])
            });
            img.save(path).map_err(err)
        }
        other => Err(PcError::InvalidArgument(format!(
            "cannot encode {}-channel frames as PNG",
            other
        ))),
    }
}

/// Write a whole sequence as `frame_000.png`, `frame_001.png`, ...
pub fn save_sequence_dir<T: Real>(seq: &SequenceBatch<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PcError::Io(format!("{}: {}", dir.display(), e)))?;
    for (t, frame) in seq.frames.iter().enumerate() {
        save_frame_png(frame, &dir.join(format!("frame_{:03}.png", t)))?;
    }
    Ok(())
}

/// Two-row comparison grid: ground truth on top, predictions below,
/// separated by a thin gray gutter. Missing ground-truth slots stay black.
pub fn side_by_side_grid<T: Real>(
    ground_truth: &[Array3<T>],
    predictions: &[Array3<T>],
) -> Result<Array3<T>> {
    let first = predictions
        .first()
        .ok_or_else(|| PcError::InvalidArgument("no predictions to lay out".into()))?;
    let (c, h, w) = first.dim();
    let cols = predictions.len();
    let gutter = 2usize;
    let grid_h = 2 * h + gutter;
    let grid_w = cols * w + (cols - 1) * gutter;
    let mut grid = Array3::<T>::from_elem((c, grid_h, grid_w), T::cast(0.5));
    for (k, pred) in predictions.iter().enumerate() {
        if pred.dim() != (c, h, w) {
            return Err(PcError::Shape(format!(
                "prediction {} has shape {:?}, expected {:?}",
                k,
                pred.dim(),
                (c, h, w)
            )));
        }
        let x0 = k * (w + gutter);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let gt = ground_truth
                        .get(k)
                        .map(|f| f[(ch, i, j)])
                        .unwrap_or_else(T::zero);
                    grid[(ch, i, x0 + j)] = gt;
                    grid[(ch, h + gutter + i, x0 + j)] = pred[(ch, i, j)];
                }
            }
        }
    }
    Ok(grid)
}
