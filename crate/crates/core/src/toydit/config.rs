use serde::{Deserialize, Serialize};

use super::real::Precision;
use super::ToyError;

pub const ALLOWED_TIMESTEPS: [usize; 4] = [50, 100, 200, 500];

/// Nonlinearity applied to `c` before the modulation projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CondActivation {
    Identity,
    #[default]
    Silu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_classes: usize,
    pub cond_dim: usize,
    pub hidden_width: usize,
    pub n_blocks: usize,
    pub n_timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Decoupled weight decay applied with each optimizer step.
    pub weight_decay: f64,
    pub seed: u64,
    pub monitor_every: usize,
    /// Width of the sinusoidal timestep features fed to the timestep MLP.
    pub freq_dim: usize,
    /// Maps timesteps onto a 1000-step grid (t * 1000 / T) before the sinusoidal features.
    pub rescale_timesteps: bool,
    pub cond_activation: CondActivation,
    /// Adds a bias to the gamma/beta/gate projections.
    pub modulation_bias: bool,
    pub init_std_cond: f64,
    pub init_std_mod: f64,
    /// Size of the fixed batch whose loss is recorded in the trace.
    pub eval_batch: usize,
    /// Arithmetic used during training; weights are widened to double afterwards.
    pub precision: Precision,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_classes: 8,
            cond_dim: 64,
            hidden_width: 64,
            n_blocks: 3,
            n_timesteps: 200,
            beta_min: 1e-4,
            beta_max: 0.02,
            train_steps: 20_000,
            batch: 256,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            monitor_every: 500,
            freq_dim: 256,
            rescale_timesteps: true,
            cond_activation: CondActivation::Silu,
            modulation_bias: false,
            init_std_cond: 0.02,
            init_std_mod: 0.02,
            eval_batch: 1024,
            precision: Precision::F32,
        }
    }
}

impl ToyConfig {
    pub fn with_seed(seed: u64) -> Self {
        ToyConfig {
            seed,
            ..ToyConfig::default()
        }
    }

    /// Factor applied to integer timesteps before embedding them.
    pub fn time_scale(&self) -> f64 {
        if self.rescale_timesteps {
            1000.0 / self.n_timesteps as f64
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let counts = [
            ("n_classes", self.n_classes),
            ("cond_dim", self.cond_dim),
            ("hidden_width", self.hidden_width),
            ("n_blocks", self.n_blocks),
            ("batch", self.batch),
            ("monitor_every", self.monitor_every),
            ("freq_dim", self.freq_dim),
            ("eval_batch", self.eval_batch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ToyError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(ToyError::BadClassCount(self.n_classes));
        }
        if !ALLOWED_TIMESTEPS.contains(&self.n_timesteps) {
            return Err(ToyError::BadConfig(format!(
                "n_timesteps must be one of {ALLOWED_TIMESTEPS:?}, got {}",
                self.n_timesteps
            )));
        }
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_max && self.beta_max < 1.0) {
            return Err(ToyError::BadSchedule(format!(
                "need 0 < beta_min < beta_max < 1, got {} and {}",
                self.beta_min, self.beta_max
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ToyError::BadConfig(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.freq_dim % 2 != 0 {
            return Err(ToyError::BadConfig(format!("freq_dim must be even, got {}", self.freq_dim)));
        }
        for (name, v) in [("lr", self.lr), ("init_std_cond", self.init_std_cond), ("init_std_mod", self.init_std_mod)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ToyError::BadConfig(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Trace rows a full run produces: the initial row plus one per monitor interval.
    pub fn expected_trace_rows(&self) -> usize {
        1 + self.train_steps / self.monitor_every
    }
}
