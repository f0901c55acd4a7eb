//! Run configuration: network + training + data source, one JSON file.

use anyhow::{bail, Context, Result};
use pcpredict_core::data::{gen_bouncing_shapes, load_sequence_dir, SequenceBatch, SyntheticSceneSpec};
use pcpredict_core::network::NetworkConfig;
use pcpredict_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    /// Generate `count` sequences from the spec, seeds spec.seed + k.
    Synthetic { spec: SyntheticSceneSpec, count: usize },
    /// A directory of sequence directories (or one sequence directory).
    Dir { path: String },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }
}

/// Either every PNG sequence subdirectory of `path`, or `path` itself when
/// it directly holds frames.
pub fn sequence_dirs(path: &Path) -> Result<Vec<std::path::PathBuf>> {
    let has_png = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok())
        .any(|e| {
            e.path()
                .extension()
                .map(|x| x.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        });
    if has_png {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<_> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("{}: no PNG frames and no sequence subdirectories", path.display());
    }
    Ok(dirs)
}

pub fn materialize_dataset(data: &DataConfig) -> Result<Vec<SequenceBatch<f32>>> {
    match data {
        DataConfig::Synthetic { spec, count } => {
            if *count == 0 {
                bail!("synthetic dataset count must be >= 1");
            }
            (0..*count)
                .map(|k| {
                    let mut s = spec.clone();
                    s.seed = spec.seed.wrapping_add(k as u64);
                    Ok(gen_bouncing_shapes::<f32>(&s)?)
                })
                .collect()
        }
        DataConfig::Dir { path } => {
            let dirs = sequence_dirs(Path::new(path))?;
            dirs.iter()
                .map(|d| {
                    load_sequence_dir::<f32>(d)
                        .with_context(|| format!("loading sequence {}", d.display()))
                })
                .collect()
        }
    }
}
