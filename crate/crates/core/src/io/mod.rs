//! File formats: NPY tensors, JSON reports, embedding sidecars and CSV tables.

pub mod npy;
pub mod report;

mod embedding;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use embedding::{load_embedding_set, save_embedding_set, sidecar_path, EmbeddingKind, EmbeddingMeta, EmbeddingSet};
pub use npy::{read_npy, write_npy};
pub use report::{read_report, to_report_string, write_report};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("not an NPY file (magic bytes mismatch)")]
    MagicMismatch,
    #[error("unsupported NPY version {major}.{minor} (only 1.0 is accepted)")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("unsupported dtype '{0}' (only '<f4' and '<f8' are accepted)")]
    UnsupportedDtype(String),
    #[error("Fortran-ordered arrays are not supported")]
    FortranOrderUnsupported,
    #[error("payload is {actual} bytes, header implies {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("non-finite value at {0}")]
    NonFiniteValue(String),
    #[error("invalid embedding set: {0}")]
    InvalidEmbeddingSet(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl IoError {
    pub(crate) fn at(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `header` followed by one line per row. Floats use shortest round-trip form.
pub fn write_csv<R: AsRef<[String]>>(path: impl AsRef<Path>, header: &[&str], rows: &[R]) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.as_ref().join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| IoError::at(path, e))
}
