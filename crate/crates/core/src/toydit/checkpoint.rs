//! Checkpoints: one float64 NPY file per tensor plus `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ToyConfig;
use super::model::ModelParams;
use super::ToyError;
use crate::io::{read_npy, read_report, write_npy, write_report, IoError};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_NAME: &str = "condscope-toydit";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ToyConfig,
    /// Optimizer steps taken; zero means the weights are the initialization.
    pub trained_steps: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, cfg: &ToyConfig, params: &ModelParams, trained_steps: usize) -> Result<(), ToyError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::at(dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in params.tensors() {
        let file = format!("{name}.npy");
        let shape = t.shape().to_vec();
        let data = t.iter().copied().collect();
        let tensor = Tensor::from_f64(shape.clone(), data).expect("shape matches data");
        write_npy(&tensor, dir.join(&file))?;
        tensors.push(TensorEntry { name, file, shape });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: cfg.clone(),
        trained_steps,
        tensors,
    };
    write_report(&manifest, dir.join(MANIFEST_FILE))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, ModelParams), ToyError> {
    let manifest: Manifest = read_report(dir.join(MANIFEST_FILE))?;
    if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
        return Err(ToyError::BadCheckpoint(format!(
            "unsupported checkpoint format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut params = ModelParams::init(&manifest.config)?;
    let slots = params.tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(ToyError::BadCheckpoint(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((name, mut slot), entry) in slots.into_iter().zip(&manifest.tensors) {
        if entry.name != name || entry.shape != slot.shape() {
            return Err(ToyError::BadCheckpoint(format!(
                "expected {name} {:?}, manifest has {} {:?}",
                slot.shape(),
                entry.name,
                entry.shape
            )));
        }
        if entry.file.contains(['/', '\\']) {
            return Err(ToyError::BadCheckpoint(format!("tensor file must be a bare name: {}", entry.file)));
        }
        let t = read_npy(dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(ToyError::BadCheckpoint(format!("{}: file shape {:?}", entry.file, t.shape())));
        }
        for (dst, src) in slot.iter_mut().zip(t.to_f64_vec()) {
            *dst = src;
        }
    }
    if !params.all_finite() {
        return Err(ToyError::BadCheckpoint("non-finite weights".into()));
    }
    Ok((manifest, params))
}
