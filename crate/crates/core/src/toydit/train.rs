use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ToyConfig;
use super::data::Mixture;
use super::model::{Batch, ModelParams};
use super::real::{Precision, Real};
use super::schedule::DiffusionSchedule;
use super::ToyError;
use crate::io::{write_csv, IoError};
use crate::metrics::{cosine_matrix, cosine_summary, mean_abs_vector, participation_ratio};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const TRACE_HEADER: [&str; 4] = ["step", "loss", "cosine", "npr"];

/// Stream id for the fixed evaluation batch, kept apart from the training stream.
const EVAL_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Loss on the fixed evaluation batch.
    pub loss: f64,
    pub cosine: f64,
    pub npr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![r.step.to_string(), r.loss.to_string(), r.cosine.to_string(), r.npr.to_string()])
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        write_csv(path, &TRACE_HEADER, &self.csv_rows())
    }
}

/// Adaptive-moment optimizer state, one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct Adam<T: Real = f64> {
    lr: f64,
    weight_decay: f64,
    step: i32,
    m: ModelParams<T>,
    v: ModelParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.step += 1;
        let bc1 = T::of(1.0 - ADAM_BETA1.powi(self.step));
        let bc2 = T::of(1.0 - ADAM_BETA2.powi(self.step));
        let (b1, b2, eps, lr) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2), T::of(ADAM_EPS), T::of(self.lr));
        let one = T::one();
        let shrink = one - T::of(self.lr * self.weight_decay);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((mut p, g), mut m), mut v) in ps
            .into_iter()
            .map(|(_, t)| t)
            .zip(gs.into_iter().map(|(_, t)| t))
            .zip(ms.into_iter().map(|(_, t)| t))
            .zip(vs.into_iter().map(|(_, t)| t))
        {
            ndarray::Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p = *p * shrink - lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}

/// Condition vectors for every class at timestep `t`.
pub fn class_conditions<T: Real>(params: &ModelParams<T>, t: usize) -> Result<Array2<T>, ToyError> {
    let labels: Vec<usize> = (0..params.n_classes()).collect();
    let feats = params.time_features(&vec![t; labels.len()]);
    params.condition(feats.view(), &labels)
}

/// Mean pairwise cosine and nPR of the mean |c| across classes.
pub fn condition_stats(c: ArrayView2<'_, f64>) -> Result<(f64, f64), ToyError> {
    let m = cosine_matrix(c).map_err(ToyError::Metrics)?;
    let cos = cosine_summary(m.view()).map_err(ToyError::Metrics)?.mean;
    let v = mean_abs_vector(c);
    let pr = participation_ratio(&v).map_err(ToyError::Metrics)?;
    Ok((cos, pr / c.ncols() as f64))
}

/// Draws a training batch: uniform labels, mixture points, uniform `t`, Gaussian noise.
pub fn draw_batch<T: Real, R: Rng>(
    params: &ModelParams<T>,
    mixture: &Mixture,
    schedule: &DiffusionSchedule,
    time_table: &Array2<T>,
    n: usize,
    rng: &mut R,
) -> Batch<T> {
    let mut x = Array2::zeros((n, 2));
    let mut eps = Array2::zeros((n, 2));
    let mut feats = Array2::zeros((n, params.freq_dim()));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (x0, label) = mixture.draw_labeled(rng);
        let t = rng.random_range(1..=schedule.n_timesteps());
        let e = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
        let xt = schedule.q_sample(x0, t, e).expect("t drawn in range");
        x[[i, 0]] = T::of(xt[0]);
        x[[i, 1]] = T::of(xt[1]);
        eps[[i, 0]] = T::of(e[0]);
        eps[[i, 1]] = T::of(e[1]);
        feats.row_mut(i).assign(&time_table.row(t - 1));
        labels.push(label);
    }
    Batch { x, feats, labels, eps }
}

pub struct Trainer<T: Real = f64> {
    pub cfg: ToyConfig,
    pub params: ModelParams<T>,
    pub trace: TrainingTrace,
    mixture: Mixture,
    schedule: DiffusionSchedule,
    time_table: Array2<T>,
    eval_batch: Batch<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    grads: ModelParams<T>,
    step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &ToyConfig) -> Result<Self, ToyError> {
        cfg.validate()?;
        let params = ModelParams::init(cfg)?;
        let mixture = Mixture::new(cfg.n_classes)?;
        let schedule = DiffusionSchedule::new(cfg.n_timesteps, cfg.beta_min, cfg.beta_max)?;
        let ts: Vec<usize> = (1..=cfg.n_timesteps).collect();
        let time_table = params.time_features(&ts);
        // the model init already consumed the seed's default stream
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(EVAL_STREAM);
        let eval_batch = draw_batch(&params, &mixture, &schedule, &time_table, cfg.eval_batch, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(EVAL_STREAM + 1);
        let mut t = Trainer {
            adam: Adam::new(&params, cfg.lr, cfg.weight_decay),
            grads: params.zeros_like(),
            cfg: cfg.clone(),
            params,
            trace: TrainingTrace::default(),
            mixture,
            schedule,
            time_table,
            eval_batch,
            rng,
            step: 0,
        };
        t.record()?;
        Ok(t)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn record(&mut self) -> Result<(), ToyError> {
        let loss = self.params.loss(&self.eval_batch)?;
        let c = class_conditions(&self.params, self.cfg.n_timesteps)?.mapv(T::as_f64);
        let (cosine, npr) = condition_stats(c.view())?;
        self.trace.rows.push(TraceRow {
            step: self.step,
            loss,
            cosine,
            npr,
        });
        Ok(())
    }

    /// One optimizer step; records a trace row on monitor boundaries.
    pub fn step(&mut self) -> Result<f64, ToyError> {
        let batch = draw_batch(
            &self.params,
            &self.mixture,
            &self.schedule,
            &self.time_table,
            self.cfg.batch,
            &mut self.rng,
        );
        let loss = self.params.accumulate_grads(&batch, &mut self.grads)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(ToyError::NonFiniteLoss {
                step: self.step,
                trace: self.trace.clone(),
            });
        }
        self.adam.step(&mut self.params, &self.grads);
        if self.step % self.cfg.monitor_every == 0 {
            self.record()?;
        }
        Ok(loss)
    }

    pub fn run(self) -> Result<(ModelParams<T>, TrainingTrace), ToyError> {
        self.run_observed(|_| {})
    }

    /// [`Trainer::run`], calling `on_row` for every trace row as it is recorded.
    pub fn run_observed(mut self, mut on_row: impl FnMut(&TraceRow)) -> Result<(ModelParams<T>, TrainingTrace), ToyError> {
        let mut seen = 0;
        loop {
            for row in &self.trace.rows[seen..] {
                on_row(row);
            }
            seen = self.trace.rows.len();
            if self.step >= self.cfg.train_steps {
                return Ok((self.params, self.trace));
            }
            self.step()?;
        }
    }
}

/// Trains the toy model from scratch in the configured precision; bit-for-bit
/// deterministic in the config. The weights come back in double precision.
pub fn train(cfg: &ToyConfig) -> Result<(ModelParams, TrainingTrace), ToyError> {
    train_observed(cfg, |_| {})
}

/// [`train`] with a callback per recorded trace row.
pub fn train_observed(cfg: &ToyConfig, on_row: impl FnMut(&TraceRow)) -> Result<(ModelParams, TrainingTrace), ToyError> {
    match cfg.precision {
        Precision::F32 => Trainer::<f32>::new(cfg)?.run_observed(on_row).map(|(p, t)| (p.cast(), t)),
        Precision::F64 => Trainer::<f64>::new(cfg)?.run_observed(on_row),
    }
}
