//! Desk-scale class-conditional diffusion transformer with AdaLN
//! conditioning, trained on a Gaussian mixture in the plane.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod model;
pub mod real;
pub mod schedule;
pub mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use config::{CondActivation, ToyConfig};
pub use data::Mixture;
pub use model::{Batch, BlockParams, ModelParams};
pub use real::{Precision, Real};
pub use schedule::DiffusionSchedule;
pub use train::{class_conditions, condition_stats, train, train_observed, TraceRow, Trainer, TrainingTrace};

use crate::io::IoError;
use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("need at least 2 classes, got {0}")]
    BadClassCount(usize),
    #[error("invalid diffusion schedule: {0}")]
    BadSchedule(String),
    #[error("timestep {t} outside 1..={n_timesteps}")]
    BadTimestep { t: usize, n_timesteps: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize, trace: TrainingTrace },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Metrics(MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
}
