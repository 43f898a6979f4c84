//! Trajectory files: JSON lines, manifest first, then one record per
//! trajectory with observations packed as base64 bytes (147 per step).
//! Serialization is deterministic, so save∘load∘save is byte-stable.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use memdep_core::dataset::{Dataset, DatasetError, DatasetManifest, Trajectory, FORMAT_NAME, FORMAT_VERSION};
use memdep_core::envgym::{GridObservation, TaskKind, OBS_LEN};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}, field `{field}`: {message}")]
    Field { line: usize, field: &'static str, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: DatasetError },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wire form of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: u64,
    pub task: TaskKind,
    pub seed: u64,
    pub actions: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub annotated: bool,
    pub obs: String,
}

impl Record {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        let mut bytes = Vec::with_capacity(t.observations.len() * OBS_LEN);
        for o in &t.observations {
            bytes.extend_from_slice(o.as_bytes());
        }
        Self {
            id: t.id,
            task: t.task,
            seed: t.seed,
            actions: t.actions.clone(),
            pairs: t.pairs.clone(),
            annotated: t.annotated,
            obs: STANDARD.encode(bytes),
        }
    }

    /// Decodes and fully validates; `line` only labels errors.
    pub fn into_trajectory(self, line: usize) -> Result<Trajectory, FormatError> {
        let field = |field, message: String| FormatError::Field { line, field, message };
        let bytes = STANDARD.decode(&self.obs).map_err(|e| field("obs", e.to_string()))?;
        if bytes.len() % OBS_LEN != 0 {
            return Err(field("obs", format!("{} bytes is not a multiple of {OBS_LEN}", bytes.len())));
        }
        let observations = bytes
            .chunks(OBS_LEN)
            .map(|c| GridObservation::from_bytes(c).ok_or_else(|| field("obs", "malformed observation".into())))
            .collect::<Result<Vec<_>, _>>()?;
        let t = Trajectory {
            id: self.id,
            task: self.task,
            seed: self.seed,
            observations,
            actions: self.actions,
            pairs: self.pairs,
            annotated: self.annotated,
        };
        t.validate().map_err(|source| FormatError::Invalid { line, source })?;
        Ok(t)
    }
}

pub fn to_string(ds: &Dataset) -> Result<String, serde_json::Error> {
    let mut out = serde_json::to_string(&ds.manifest)?;
    out.push('\n');
    for t in &ds.trajectories {
        out.push_str(&serde_json::to_string(&Record::from_trajectory(t))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses and validates a whole file. Line numbers are 1-based.
pub fn from_str(text: &str) -> Result<Dataset, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| FormatError::Manifest("empty file".into()))?;
    let manifest: DatasetManifest =
        serde_json::from_str(head).map_err(|e| FormatError::Syntax { line: 1, message: e.to_string() })?;
    if manifest.format != FORMAT_NAME {
        return Err(FormatError::Manifest(format!("unknown format `{}`", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(FormatError::Manifest(format!("unsupported version {}", manifest.version)));
    }
    let mut trajectories = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let rec: Record =
            serde_json::from_str(l).map_err(|e| FormatError::Syntax { line, message: e.to_string() })?;
        if rec.task != manifest.task() {
            return Err(FormatError::Field { line, field: "task", message: "differs from the manifest".into() });
        }
        trajectories.push(rec.into_trajectory(line)?);
    }
    if trajectories.len() != manifest.count {
        return Err(FormatError::Manifest(format!(
            "manifest announces {} trajectories, file holds {}",
            manifest.count,
            trajectories.len()
        )));
    }
    let ds = Dataset { manifest, trajectories };
    ds.validate().map_err(|e| FormatError::Manifest(e.to_string()))?;
    Ok(ds)
}

pub fn load(path: &Path) -> Result<Dataset, FormatError> {
    from_str(&fs::read_to_string(path)?)
}

/// Writes to a sibling temporary file, syncs, then renames over `path`.
pub fn save(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    let text = to_string(ds).map_err(|e| FormatError::Manifest(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("data");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
