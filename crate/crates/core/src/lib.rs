//! Forensics for the condition vector `c` of AdaLN diffusion transformers:
//! similarity and sparsity metrics, head/tail pruning with timestep
//! schedules, and a small trainable diffusion model to watch them emerge.

pub mod adaln;
pub mod io;
pub mod metrics;
pub mod pruning;
pub mod sampler;
pub mod sparse;
pub mod tensor;
pub mod toydit;

pub use tensor::{DType, Tensor, TensorData, TensorError};
