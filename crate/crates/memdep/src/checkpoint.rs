//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `b"MDCK"`, `u32` version, `u64` header length, header JSON, `u32`
//! tensor count, then per tensor `u32` name length, UTF-8 name, `u32` rank,
//! `u64` extents, `f64` values.

use std::fs;
use std::path::Path;

use memdep_core::autodiff::{ParamStore, Tensor};
use memdep_core::envgym::TaskParams;
use memdep_core::model::{Model, ModelConfig, ModelError};
use memdep_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"MDCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor `{0}`: {1}")]
    Tensor(String, String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything needed to rebuild and describe a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub task: Option<TaskParams>,
    pub train: Option<TrainConfig>,
}

pub fn encode(header: &Header, params: &ParamStore) -> Result<Vec<u8>, CheckpointError> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.0.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Header, ParamStore), CheckpointError> {
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = r.len()?;
    let header: Header = serde_json::from_slice(r.take(n)?)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Tensor("?".into(), "name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
        let raw = r.take(numel.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CheckpointError::Tensor(name, "non-finite value".into()));
        }
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Tensor(name.clone(), e.to_string()))?;
        store.add(name, t);
    }
    if !r.0.is_empty() {
        return Err(CheckpointError::Tensor("<end>".into(), "trailing bytes".into()));
    }
    Ok((header, store))
}

pub fn save(path: &Path, header: &Header, model: &Model) -> Result<(), CheckpointError> {
    crate::io::write_atomic(path, &encode(header, model.params())?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Header, Model), CheckpointError> {
    let (header, store) = decode(&fs::read(path)?)?;
    let model = Model::from_params(header.model.clone(), store)?;
    Ok((header, model))
}
