use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_npy, read_report, write_npy, write_report, IoError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    ClassTable,
    TimestepGrid,
    Condition,
}

/// Contents of the `<name>.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingMeta {
    pub model_name: String,
    pub kind: EmbeddingKind,
    #[serde(default)]
    pub timestep_value: Option<f64>,
    #[serde(default)]
    pub notes: String,
}

/// An N×d matrix of embeddings plus provenance.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    matrix: Tensor,
    meta: EmbeddingMeta,
}

impl EmbeddingSet {
    pub fn new(matrix: Tensor, meta: EmbeddingMeta) -> Result<Self, IoError> {
        if matrix.rank() != 2 {
            return Err(IoError::InvalidEmbeddingSet(format!(
                "matrix must be rank 2, got shape {:?}",
                matrix.shape()
            )));
        }
        if meta.kind == EmbeddingKind::Condition && meta.timestep_value.is_none() {
            return Err(IoError::InvalidEmbeddingSet(
                "condition vectors must record the timestep they were formed at".into(),
            ));
        }
        Ok(EmbeddingSet { matrix, meta })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn meta(&self) -> &EmbeddingMeta {
        &self.meta
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.meta.kind
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// `dir/emb.npy` -> `dir/emb.meta.json`
pub fn sidecar_path(npy: &Path) -> PathBuf {
    let stem = npy.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    npy.with_file_name(format!("{stem}.meta.json"))
}

/// Loads `path` and its sidecar. Without a sidecar, `fallback` supplies the metadata.
pub fn load_embedding_set(path: impl AsRef<Path>, fallback: EmbeddingMeta) -> Result<EmbeddingSet, IoError> {
    let path = path.as_ref();
    let matrix = read_npy(path)?;
    let side = sidecar_path(path);
    let meta = if side.exists() { read_report(&side)? } else { fallback };
    EmbeddingSet::new(matrix, meta)
}

pub fn save_embedding_set(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    write_npy(&set.matrix, path)?;
    write_report(&set.meta, sidecar_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(kind: EmbeddingKind, t: Option<f64>) -> EmbeddingMeta {
        EmbeddingMeta {
            model_name: "toy".into(),
            kind,
            timestep_value: t,
            notes: String::new(),
        }
    }

    #[test]
    fn condition_requires_timestep() {
        let m = Tensor::from_f64(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(EmbeddingSet::new(m.clone(), meta(EmbeddingKind::Condition, None)).is_err());
        assert!(EmbeddingSet::new(m, meta(EmbeddingKind::Condition, Some(999.0))).is_ok());
    }

    #[test]
    fn rank_two_only() {
        let v = Tensor::vector(vec![1.0, 2.0]);
        assert!(EmbeddingSet::new(v, meta(EmbeddingKind::ClassTable, None)).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cond.npy");
        assert_eq!(sidecar_path(&p), dir.path().join("cond.meta.json"));
        let m = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let set = EmbeddingSet::new(m, meta(EmbeddingKind::Condition, Some(0.5))).unwrap();
        save_embedding_set(&set, &p).unwrap();
        let back = load_embedding_set(&p, meta(EmbeddingKind::ClassTable, None)).unwrap();
        assert_eq!(back.meta(), set.meta());
        assert!(back.matrix().bit_eq(set.matrix()));
    }
}
