//! DDPM ancestral sampling from the toy model with a pruning hook on the
//! condition vector, and mixture-based quality metrics.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::mean_abs_vector;
use crate::pruning::{prune_in_place, quantile_tau, should_prune, PruneConfig, PruneError, PruneSchedule};
use crate::toydit::{class_conditions, DiffusionSchedule, Mixture, ModelParams, Real, ToyError};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("model is untrained: every gate projection is zero")]
    UntrainedParams,
    #[error("invalid sampling config: {0}")]
    BadConfig(String),
    #[error("class {class} has {count} samples, need at least 2")]
    EmptyClass { class: usize, count: usize },
    #[error("sample counts differ: baseline {baseline}, variant {variant}")]
    CountMismatch { baseline: usize, variant: usize },
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

/// A prune operator together with the steps on which it fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneHook {
    pub config: PruneConfig,
    pub schedule: PruneSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    /// `n × 2`, class-major: all samples of class 0, then class 1, ...
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub hook: Option<PruneHook>,
    pub seed: u64,
}

/// Condition vector actually fed to the trunk at one reverse step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCondition {
    /// 0 for the first reverse step (t = T).
    pub step_index: usize,
    pub t: usize,
    pub pruned: bool,
    pub c: Vec<f64>,
}

/// RNG for one chain; chains never share a stream, so a sample does not
/// depend on how many others are drawn alongside it.
pub fn chain_rng(seed: u64, label: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((label as u64) << 32) | index as u64);
    rng
}

fn check_ready<T: Real>(params: &ModelParams<T>, label: usize, hook: Option<&PruneHook>, n_steps: usize) -> Result<(), SampleError> {
    if params.gates_are_zero() {
        return Err(SampleError::UntrainedParams);
    }
    if label >= params.n_classes() {
        return Err(SampleError::BadConfig(format!("label {label} out of range for {} classes", params.n_classes())));
    }
    if let Some(h) = hook {
        h.config.validate()?;
        h.schedule.validate(n_steps)?;
        if let PruneConfig::KeepTopK { k } | PruneConfig::ZeroTopK { k } = h.config {
            if k > params.cond_dim() {
                return Err(PruneError::KTooLarge { k, d: params.cond_dim() }.into());
            }
        }
    }
    Ok(())
}

/// `n` samples of class `label`.
///
/// Reverse steps run `t = T..=1` with variance `beta_t` and no noise on the
/// final step. Whenever the hook's schedule fires, `c` is pruned before it
/// reaches the modulation projections.
pub fn ddpm_sample<T: Real>(
    params: &ModelParams<T>,
    label: usize,
    n: usize,
    diffusion: &DiffusionSchedule,
    hook: Option<&PruneHook>,
    seed: u64,
) -> Result<Array2<f64>, SampleError> {
    ddpm_sample_observed(params, label, n, diffusion, hook, seed, |_| {})
}

/// [`ddpm_sample`] that also reports the condition vector used at every step.
pub fn ddpm_sample_observed<T: Real>(
    params: &ModelParams<T>,
    label: usize,
    n: usize,
    diffusion: &DiffusionSchedule,
    hook: Option<&PruneHook>,
    seed: u64,
    mut observe: impl FnMut(StepCondition),
) -> Result<Array2<f64>, SampleError> {
    let n_steps = diffusion.n_timesteps();
    check_ready(params, label, hook, n_steps)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| chain_rng(seed, label, i)).collect();
    let mut x = Array2::<T>::zeros((n, 2));
    for (mut row, rng) in x.rows_mut().into_iter().zip(&mut rngs) {
        row[0] = T::of(rng.sample(StandardNormal));
        row[1] = T::of(rng.sample(StandardNormal));
    }
    let d = params.cond_dim();
    let mut cs = Array2::<T>::zeros((n, d));
    for step_index in 0..n_steps {
        let t = n_steps - step_index;
        let feats = params.time_features(&[t]);
        let c = params.condition(feats.view(), &[label])?;
        let mut c: Vec<f64> = c.iter().map(|v| v.as_f64()).collect();
        let pruned = match hook {
            Some(h) if should_prune(&h.schedule, step_index, n_steps)? => {
                prune_in_place(&mut c, &h.config)?;
                true
            }
            _ => false,
        };
        for mut row in cs.rows_mut() {
            row.iter_mut().zip(&c).for_each(|(o, &v)| *o = T::of(v));
        }
        observe(StepCondition { step_index, t, pruned, c });
        let eps = params.forward_from_condition(x.view(), cs.view())?;

        let alpha = diffusion.alpha(t)?;
        let beta = diffusion.beta(t)?;
        let alpha_bar = diffusion.alpha_bar(t)?;
        let a = T::of(1.0 / alpha.sqrt());
        let b = T::of(beta / (1.0 - alpha_bar).sqrt());
        let sigma = T::of(beta.sqrt());
        for ((mut xr, er), rng) in x.rows_mut().into_iter().zip(eps.rows()).zip(&mut rngs) {
            for j in 0..2 {
                xr[j] = a * (xr[j] - b * er[j]);
            }
            if t > 1 {
                for j in 0..2 {
                    xr[j] = xr[j] + sigma * T::of(rng.sample(StandardNormal));
                }
            }
        }
    }
    Ok(x.mapv(T::as_f64))
}

/// `per_class` samples of every class, class-major.
pub fn sample_classes<T: Real>(
    params: &ModelParams<T>,
    per_class: usize,
    diffusion: &DiffusionSchedule,
    hook: Option<&PruneHook>,
    seed: u64,
) -> Result<SampleRun, SampleError> {
    if per_class == 0 {
        return Err(SampleError::BadConfig("need at least one sample per class".into()));
    }
    let k = params.n_classes();
    let mut samples = Array2::zeros((k * per_class, 2));
    for label in 0..k {
        let s = ddpm_sample(params, label, per_class, diffusion, hook, seed)?;
        samples.slice_mut(ndarray::s![label * per_class..(label + 1) * per_class, ..]).assign(&s);
    }
    Ok(SampleRun {
        samples,
        labels: (0..k).flat_map(|l| std::iter::repeat_n(l, per_class)).collect(),
        hook: hook.copied(),
        seed,
    })
}

/// Tail threshold removing about `fraction` of the coordinates of the mean
/// |c| across classes at the first reverse step.
pub fn auto_tail_tau<T: Real>(params: &ModelParams<T>, n_timesteps: usize, fraction: f64) -> Result<f64, SampleError> {
    let c = class_conditions(params, n_timesteps)?.mapv(T::as_f64);
    Ok(quantile_tau(&mean_abs_vector(c.view()), fraction)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEval {
    pub n_samples: usize,
    /// Distance between empirical and true class mean.
    pub per_class_mean_error: Vec<f64>,
    /// Frobenius norm of empirical minus true class covariance.
    pub per_class_cov_error: Vec<f64>,
    /// Fraction of samples whose nearest true mean is their own class.
    pub class_accuracy: f64,
}

impl MixtureEval {
    /// Average over classes of the per-class mean error.
    pub fn mean_error(&self) -> f64 {
        self.per_class_mean_error.iter().sum::<f64>() / self.per_class_mean_error.len() as f64
    }

    pub fn cov_error(&self) -> f64 {
        self.per_class_cov_error.iter().sum::<f64>() / self.per_class_cov_error.len() as f64
    }
}

/// Empirical per-class moments against the true isotropic mixture; sample
/// covariance uses the `n - 1` denominator.
pub fn eval_mixture(samples: ArrayView2<'_, f64>, labels: &[usize], mixture: &Mixture) -> Result<MixtureEval, SampleError> {
    if samples.ncols() != 2 || samples.nrows() != labels.len() {
        return Err(SampleError::BadConfig(format!("{:?} samples for {} labels", samples.dim(), labels.len())));
    }
    let k = mixture.n_classes();
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(SampleError::BadConfig(format!("label {l} out of range for {k} classes")));
    }
    let mut count = vec![0usize; k];
    let mut sum = vec![[0.0f64; 2]; k];
    let mut correct = 0usize;
    for (x, &l) in samples.rows().into_iter().zip(labels) {
        count[l] += 1;
        sum[l][0] += x[0];
        sum[l][1] += x[1];
        if mixture.nearest([x[0], x[1]]) == l {
            correct += 1;
        }
    }
    if let Some(class) = count.iter().position(|&c| c < 2) {
        return Err(SampleError::EmptyClass { class, count: count[class] });
    }
    let means: Vec<[f64; 2]> = sum.iter().zip(&count).map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64]).collect();
    let mut cov = vec![[0.0f64; 3]; k];
    for (x, &l) in samples.rows().into_iter().zip(labels) {
        let (dx, dy) = (x[0] - means[l][0], x[1] - means[l][1]);
        cov[l][0] += dx * dx;
        cov[l][1] += dx * dy;
        cov[l][2] += dy * dy;
    }
    let var = mixture.sigma * mixture.sigma;
    let mut mean_err = Vec::with_capacity(k);
    let mut cov_err = Vec::with_capacity(k);
    for l in 0..k {
        let mu = mixture.means[l];
        mean_err.push(((means[l][0] - mu[0]).powi(2) + (means[l][1] - mu[1]).powi(2)).sqrt());
        let m = (count[l] - 1) as f64;
        let (sxx, sxy, syy) = (cov[l][0] / m - var, cov[l][1] / m, cov[l][2] / m - var);
        cov_err.push((sxx * sxx + 2.0 * sxy * sxy + syy * syy).sqrt());
    }
    Ok(MixtureEval {
        n_samples: labels.len(),
        per_class_mean_error: mean_err,
        per_class_cov_error: cov_err,
        class_accuracy: correct as f64 / labels.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantDelta {
    pub name: String,
    pub class_accuracy: f64,
    pub mean_error: f64,
    pub cov_error: f64,
    /// Variant minus baseline.
    pub accuracy_delta: f64,
    pub mean_error_delta: f64,
    pub cov_error_delta: f64,
    /// Variant over baseline; infinite when the baseline error is zero.
    pub mean_error_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: MixtureEval,
    pub variants: Vec<VariantDelta>,
}

pub fn compare_runs(baseline: &MixtureEval, variants: &[(String, MixtureEval)]) -> Result<Comparison, SampleError> {
    let rows = variants
        .iter()
        .map(|(name, v)| {
            if v.n_samples != baseline.n_samples {
                return Err(SampleError::CountMismatch {
                    baseline: baseline.n_samples,
                    variant: v.n_samples,
                });
            }
            let (me, be) = (v.mean_error(), baseline.mean_error());
            Ok(VariantDelta {
                name: name.clone(),
                class_accuracy: v.class_accuracy,
                mean_error: me,
                cov_error: v.cov_error(),
                accuracy_delta: v.class_accuracy - baseline.class_accuracy,
                mean_error_delta: me - be,
                cov_error_delta: v.cov_error() - baseline.cov_error(),
                mean_error_ratio: if me == be { 1.0 } else { me / be },
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Comparison {
        baseline: baseline.clone(),
        variants: rows,
    })
}
