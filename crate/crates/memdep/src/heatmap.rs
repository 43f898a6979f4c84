//! Attention heatmaps as CSV matrices and 8-bit binary PGM images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use memdep_core::autodiff::Tensor;
use memdep_core::dataset::Trajectory;
use memdep_core::model::{Model, ModelError};

pub fn to_csv(m: &Tensor) -> String {
    let (rows, cols) = m.dims2().expect("matrix");
    let mut out = String::new();
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{}", m.at2(r, c)).expect("string write");
        }
        out.push('\n');
    }
    out
}

/// Gray level `round(255·v)` with `v` clamped to `[0, 1]`.
pub fn to_pgm(m: &Tensor) -> Vec<u8> {
    let (rows, cols) = m.dims2().expect("matrix");
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(m.data().iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    out
}

fn sigmoid(m: &Tensor) -> Tensor {
    let data = m.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
    Tensor::new(m.shape(), data).expect("same shape")
}

#[derive(Debug, thiserror::Error)]
pub enum HeatmapError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes `L{l}H{h}.csv/.pgm` with softmax attention for every layer and
/// head, plus `L{l}H{h}_sigmoid.csv/.pgm` with σ(logits) for the supervised
/// heads. Returns the written paths.
pub fn export(model: &Model, t: &Trajectory, dir: &Path) -> Result<Vec<PathBuf>, HeatmapError> {
    fs::create_dir_all(dir)?;
    let out = model.infer(&t.observations, &t.actions)?;
    let supervised_layer = model.config().supervised_layer();
    let supervised_heads = model.config().supervised_heads();
    let mut written = Vec::new();
    let mut emit = |stem: String, m: &Tensor| -> std::io::Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, to_csv(m))?;
        let pgm = dir.join(format!("{stem}.pgm"));
        fs::write(&pgm, to_pgm(m))?;
        written.extend([csv, pgm]);
        Ok(())
    };
    for (l, heads) in out.attn.iter().enumerate() {
        for (h, a) in heads.iter().enumerate() {
            emit(format!("L{l}H{h}"), a)?;
            if l == supervised_layer && supervised_heads.contains(&h) {
                emit(format!("L{l}H{h}_sigmoid"), &sigmoid(&out.attn_logits[l][h]))?;
            }
        }
    }
    Ok(written)
}
