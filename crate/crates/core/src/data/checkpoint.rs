//! Checkpoint archive: magic "PCPK1", then step counter, config snapshot,
//! and an ordered table of named little-endian tensors. Round trips are
//! bitwise.

use crate::error::{PcError, Result};
use crate::tensor::Real;
use ndarray::{ArrayD, IxDyn};
use std::io::Read;
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"PCPK1";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub step: u64,
    pub config_json: String,
    pub entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn new(step: u64, config_json: String) -> Self {
        Archive {
            step,
            config_json,
            entries: Vec::new(),
        }
    }

    pub fn push_tensor<T: Real>(&mut self, name: &str, tensor: &ArrayD<T>) {
        let mut data = Vec::with_capacity(tensor.len() * T::BYTES);
        for &v in tensor.iter() {
            v.write_le(&mut data);
        }
        self.entries.push(ArchiveEntry {
            name: name.to_string(),
            dtype: T::DTYPE.to_string(),
            shape: tensor.shape().to_vec(),
            data,
        });
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<ArrayD<T>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| PcError::Format(format!("archive has no entry '{}'", name)))?;
        if entry.dtype != T::DTYPE {
            return Err(PcError::Format(format!(
                "entry '{}' is {}, requested {}",
                name, entry.dtype, T::DTYPE
            )));
        }
        let numel: usize = entry.shape.iter().product();
        if entry.data.len() != numel * T::BYTES {
            return Err(PcError::Format(format!(
                "entry '{}' payload is {} bytes, expected {}",
                name,
                entry.data.len(),
                numel * T::BYTES
            )));
        }
        let values: Vec<T> = entry
            .data
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
            .map_err(|e| PcError::Format(format!("entry '{}': {}", name, e)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.len() as u8);
            out.extend_from_slice(e.dtype.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&e.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(PcError::Format(format!(
                "bad magic {:?}; expected {:?} (version mismatch or not a checkpoint)",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let json_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let config_json = String::from_utf8(r.take(json_len)?.to_vec())
            .map_err(|e| PcError::Format(format!("config snapshot is not UTF-8: {}", e)))?;
        let n_entries = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| PcError::Format(format!("entry name is not UTF-8: {}", e)))?;
            let dtype_len = r.take(1)?[0] as usize;
            let dtype = String::from_utf8(r.take(dtype_len)?.to_vec())
                .map_err(|e| PcError::Format(format!("dtype tag is not UTF-8: {}", e)))?;
            let elem_bytes = match dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => {
                    return Err(PcError::Format(format!("unknown dtype tag '{}'", other)))
                }
            };
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r.take(numel * elem_bytes)?.to_vec();
            entries.push(ArchiveEntry {
                name,
                dtype,
                shape,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(PcError::Format(format!(
                "{} trailing bytes after the entry table",
                bytes.len() - r.pos
            )));
        }
        Ok(Archive {
            step,
            config_json,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| PcError::Io(format!("{}: {}", path.display(), e)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| PcError::Io(format!("{}: {}", path.display(), e)))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PcError::Io(format!(
                "truncated archive: wanted {} bytes at offset {}, only {} remain",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}
