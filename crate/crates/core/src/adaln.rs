//! Adaptive layer normalization: timestep embedding, condition vectors,
//! modulation projections and the normalize-then-modulate transform.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Added to the standard deviation before dividing.
pub const NORM_EPS: f64 = 1e-5;

/// Frequency base of the sinusoidal timestep embedding.
pub const TIMESTEP_FREQ_BASE: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum AdaLnError {
    #[error("embedding width must be even and at least 2, got {0}")]
    OddDim(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("width mismatch: hidden {hidden}, modulation {modulation}")]
    WidthMismatch { hidden: usize, modulation: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
}

/// Sinusoidal embedding: `[sin(t w_0) .. sin(t w_{h-1}), cos(t w_0) .. cos(t w_{h-1})]`
/// with `h = dim / 2` and `w_i = exp(-ln(10000) i / h)`.
pub fn embed_timestep(t: f64, dim: usize) -> Result<Vec<f64>, AdaLnError> {
    if dim < 2 || dim % 2 != 0 {
        return Err(AdaLnError::OddDim(dim));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let (s, c) = (t * timestep_frequency(i, half)).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    Ok(out)
}

pub(crate) fn timestep_frequency(i: usize, half: usize) -> f64 {
    (-TIMESTEP_FREQ_BASE.ln() * i as f64 / half as f64).exp()
}

/// `c = y + t`, tagged with its class and timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub values: Vec<f64>,
    pub class_id: Option<usize>,
    pub timestep: f64,
}

impl ConditionVector {
    pub fn new(values: Vec<f64>, class_id: Option<usize>, timestep: f64) -> Result<Self, AdaLnError> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(AdaLnError::NonFinite(i));
        }
        Ok(ConditionVector {
            values,
            class_id,
            timestep,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn condition_vector(y_emb: &[f64], t_emb: &[f64]) -> Result<Vec<f64>, AdaLnError> {
    if y_emb.len() != t_emb.len() {
        return Err(AdaLnError::LengthMismatch(y_emb.len(), t_emb.len()));
    }
    Ok(y_emb.iter().zip(t_emb).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub gate: Option<Vec<f64>>,
}

impl ModulationParams {
    pub fn width(&self) -> usize {
        self.gamma.len()
    }
}

/// `W c` with a fixed left-to-right summation per output row.
pub fn project(w: ArrayView2<'_, f64>, c: &[f64]) -> Result<Vec<f64>, AdaLnError> {
    if w.ncols() != c.len() {
        return Err(AdaLnError::ShapeMismatch(format!(
            "projection has {} columns, condition has {} entries",
            w.ncols(),
            c.len()
        )));
    }
    Ok(w.rows()
        .into_iter()
        .map(|row| row.iter().zip(c).fold(0.0, |acc, (a, b)| acc + a * b))
        .collect())
}

/// `gamma = W_gamma c`, `beta = W_beta c`; no bias.
pub fn modulation(c: &[f64], w_gamma: ArrayView2<'_, f64>, w_beta: ArrayView2<'_, f64>) -> Result<ModulationParams, AdaLnError> {
    if w_gamma.dim() != w_beta.dim() {
        return Err(AdaLnError::ShapeMismatch(format!(
            "W_gamma {:?} vs W_beta {:?}",
            w_gamma.dim(),
            w_beta.dim()
        )));
    }
    Ok(ModulationParams {
        gamma: project(w_gamma, c)?,
        beta: project(w_beta, c)?,
        gate: None,
    })
}

/// [`modulation`] plus a residual gate `W_gate c`.
pub fn modulation_gated(
    c: &[f64],
    w_gamma: ArrayView2<'_, f64>,
    w_beta: ArrayView2<'_, f64>,
    w_gate: ArrayView2<'_, f64>,
) -> Result<ModulationParams, AdaLnError> {
    let mut m = modulation(c, w_gamma, w_beta)?;
    if w_gate.dim() != w_gamma.dim() {
        return Err(AdaLnError::ShapeMismatch(format!("W_gate {:?}", w_gate.dim())));
    }
    m.gate = Some(project(w_gate, c)?);
    Ok(m)
}

/// Mean and population standard deviation over the feature axis.
pub fn moments(h: &[f64]) -> (f64, f64) {
    let n = h.len() as f64;
    let mu = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// `gamma * (h - mu) / (sigma + eps) + beta`.
pub fn adaln_forward(h: &[f64], m: &ModulationParams) -> Result<Vec<f64>, AdaLnError> {
    if h.len() != m.gamma.len() || h.len() != m.beta.len() {
        return Err(AdaLnError::WidthMismatch {
            hidden: h.len(),
            modulation: m.gamma.len(),
        });
    }
    if h.is_empty() {
        return Ok(Vec::new());
    }
    let (mu, sigma) = moments(h);
    let denom = sigma + NORM_EPS;
    Ok(h.iter()
        .zip(m.gamma.iter().zip(&m.beta))
        .map(|(x, (g, b))| g * (x - mu) / denom + b)
        .collect())
}

/// Residual branch output `gate * f(adaln(h))`; zero wherever the gate is zero.
pub fn gated_residual(branch: ArrayView1<'_, f64>, m: &ModulationParams) -> Vec<f64> {
    match &m.gate {
        Some(g) => branch.iter().zip(g).map(|(b, g)| g * b).collect(),
        None => branch.to_vec(),
    }
}
