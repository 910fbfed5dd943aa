//! Zeroing operators on condition vectors and the schedules that decide
//! when they fire along a denoising trajectory.
//!
//! Surviving coordinates are never rescaled: every entry of the output is
//! either bit-identical to the input or exactly `0.0`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("invalid prune config: {0}")]
    BadConfig(String),
    #[error("k = {k} exceeds vector length {d}")]
    KTooLarge { k: usize, d: usize },
    #[error("empty vector")]
    Empty,
    #[error("step {step} out of range for {n_steps} steps")]
    OutOfRange { step: usize, n_steps: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
}

/// Which coordinates to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PruneConfig {
    /// Zero `|c_i| < tau`.
    Tail { tau: f64 },
    /// Zero `|c_i| > tau`.
    Head { tau: f64 },
    /// Keep the `k` largest magnitudes, zero the rest.
    KeepTopK { k: usize },
    /// Zero the `k` largest magnitudes.
    ZeroTopK { k: usize },
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        match *self {
            PruneConfig::Tail { tau } | PruneConfig::Head { tau } => {
                if tau > 0.0 && tau.is_finite() {
                    Ok(())
                } else {
                    Err(PruneError::BadConfig(format!("tau must be positive, got {tau}")))
                }
            }
            PruneConfig::KeepTopK { k } | PruneConfig::ZeroTopK { k } => {
                if k >= 1 {
                    Ok(())
                } else {
                    Err(PruneError::BadConfig("k must be at least 1".into()))
                }
            }
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            PruneConfig::Tail { .. } => "tail",
            PruneConfig::Head { .. } => "head",
            PruneConfig::KeepTopK { .. } => "keep_top_k",
            PruneConfig::ZeroTopK { .. } => "zero_top_k",
        }
    }
}

/// Indices of the `k` largest `|c_i|`, ties broken toward the lower index.
pub fn top_k_indices(c: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[b].abs().total_cmp(&c[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mask of coordinates that `cfg` zeroes.
fn zero_mask(c: &[f64], cfg: &PruneConfig) -> Result<Vec<bool>, PruneError> {
    cfg.validate()?;
    if c.is_empty() {
        return Err(PruneError::Empty);
    }
    let d = c.len();
    Ok(match *cfg {
        PruneConfig::Tail { tau } => c.iter().map(|x| x.abs() < tau).collect(),
        PruneConfig::Head { tau } => c.iter().map(|x| x.abs() > tau).collect(),
        PruneConfig::KeepTopK { k } | PruneConfig::ZeroTopK { k } => {
            if k > d {
                return Err(PruneError::KTooLarge { k, d });
            }
            let keep_top = matches!(cfg, PruneConfig::KeepTopK { .. });
            let mut mask = vec![keep_top; d];
            for i in top_k_indices(c, k) {
                mask[i] = !keep_top;
            }
            mask
        }
    })
}

pub fn prune(c: &[f64], cfg: &PruneConfig) -> Result<Vec<f64>, PruneError> {
    let mask = zero_mask(c, cfg)?;
    Ok(c.iter().zip(mask).map(|(&x, z)| if z { 0.0 } else { x }).collect())
}

/// In-place variant of [`prune`].
pub fn prune_in_place(c: &mut [f64], cfg: &PruneConfig) -> Result<(), PruneError> {
    let mask = zero_mask(c, cfg)?;
    for (x, z) in c.iter_mut().zip(mask) {
        if z {
            *x = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovedCount {
    pub removed: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Formats as `removed/total (pct%)` with two decimals, e.g. `448/1152 (38.94%)`.
impl fmt::Display for RemovedCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({:.2}%)", self.removed, self.total, self.fraction * 100.0)
    }
}

/// Number of entries that `cfg` turns from nonzero into zero.
pub fn removed_count(c: &[f64], cfg: &PruneConfig) -> Result<RemovedCount, PruneError> {
    let mask = zero_mask(c, cfg)?;
    let removed = c.iter().zip(mask).filter(|(&x, z)| *z && x != 0.0).count();
    Ok(RemovedCount {
        removed,
        total: c.len(),
        fraction: removed as f64 / c.len() as f64,
    })
}

/// Threshold such that `tail` pruning of `v` removes about `fraction` of its
/// coordinates: the midpoint between the `m`-th and `(m+1)`-th smallest
/// magnitudes, `m = round(fraction * d)`.
pub fn quantile_tau(v: &[f64], fraction: f64) -> Result<f64, PruneError> {
    if v.is_empty() {
        return Err(PruneError::Empty);
    }
    if !(0.0..1.0).contains(&fraction) || fraction.is_nan() {
        return Err(PruneError::BadConfig(format!("fraction must be in [0, 1), got {fraction}")));
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let m = (fraction * mags.len() as f64).round() as usize;
    let tau = if m == 0 {
        mags[0] / 2.0
    } else {
        0.5 * (mags[m - 1] + mags[m.min(mags.len() - 1)])
    };
    if tau > 0.0 {
        Ok(tau)
    } else {
        // all small magnitudes are zero; any positive tau below the next entry works
        let next = mags.iter().copied().find(|&x| x > 0.0).unwrap_or(1.0);
        Ok(next / 2.0)
    }
}

/// When along the trajectory the prune operator is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PruneSchedule {
    EveryStep,
    InitialOnly,
    LastKSteps { k_steps: usize },
}

impl PruneSchedule {
    /// Last-k schedule with k = ceil(0.1 * n_steps).
    pub fn default_last_k(n_steps: usize) -> Self {
        PruneSchedule::LastKSteps {
            k_steps: n_steps.div_ceil(10).max(1),
        }
    }

    pub fn validate(&self, n_steps: usize) -> Result<(), PruneError> {
        match *self {
            PruneSchedule::LastKSteps { k_steps } if k_steps == 0 || k_steps > n_steps => Err(
                PruneError::BadSchedule(format!("k_steps = {k_steps} must be in 1..={n_steps}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short label used in tables: `t_i`, `t_0`, `t_{n-k,n}`.
    pub fn label(&self) -> String {
        match self {
            PruneSchedule::EveryStep => "t_i".into(),
            PruneSchedule::InitialOnly => "t_0".into(),
            PruneSchedule::LastKSteps { k_steps } => format!("t_{{n-{k_steps},n}}"),
        }
    }
}

/// Whether step `step_index` (0 = first sampling step) of `n_steps` is pruned.
pub fn should_prune(schedule: &PruneSchedule, step_index: usize, n_steps: usize) -> Result<bool, PruneError> {
    if step_index >= n_steps {
        return Err(PruneError::OutOfRange {
            step: step_index,
            n_steps,
        });
    }
    schedule.validate(n_steps)?;
    Ok(match *schedule {
        PruneSchedule::EveryStep => true,
        PruneSchedule::InitialOnly => step_index == 0,
        PruneSchedule::LastKSteps { k_steps } => step_index >= n_steps - k_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tail_prune_example() {
        let c = [5.2, 0.003, -7.1, 0.04];
        let out = prune(&c, &PruneConfig::Tail { tau: 0.01 }).unwrap();
        assert_eq!(out, vec![5.2, 0.0, -7.1, 0.04]);
    }

    #[test]
    fn head_prune_example() {
        let c = [5.2, 0.003, -7.1, 0.04];
        let out = prune(&c, &PruneConfig::Head { tau: 5.0 }).unwrap();
        assert_eq!(out, vec![0.0, 0.003, 0.0, 0.04]);
        let r = removed_count(&c, &PruneConfig::Head { tau: 5.0 }).unwrap();
        assert_eq!(r.to_string(), "2/4 (50.00%)");
    }

    #[test]
    fn invalid_configs() {
        let c = [1.0, 2.0];
        assert!(matches!(prune(&c, &PruneConfig::Tail { tau: 0.0 }), Err(PruneError::BadConfig(_))));
        assert!(matches!(prune(&c, &PruneConfig::Head { tau: -1.0 }), Err(PruneError::BadConfig(_))));
        assert!(matches!(prune(&c, &PruneConfig::KeepTopK { k: 0 }), Err(PruneError::BadConfig(_))));
        assert_eq!(
            prune(&c, &PruneConfig::ZeroTopK { k: 3 }),
            Err(PruneError::KTooLarge { k: 3, d: 2 })
        );
        assert_eq!(prune(&[], &PruneConfig::Tail { tau: 1.0 }), Err(PruneError::Empty));
    }

    #[test]
    fn keep_all_is_identity() {
        let c = [0.3, -0.0, 1e-9, -4.0];
        assert_eq!(prune(&c, &PruneConfig::KeepTopK { k: 4 }).unwrap(), c.to_vec());
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        let c = [1.0, -2.0, 2.0, 1.0, 2.0];
        assert_eq!(top_k_indices(&c, 2), vec![1, 2]);
        assert_eq!(prune(&c, &PruneConfig::KeepTopK { k: 3 }).unwrap(), vec![0.0, -2.0, 2.0, 0.0, 2.0]);
        assert_eq!(prune(&c, &PruneConfig::ZeroTopK { k: 4 }).unwrap(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn removed_count_skips_existing_zeros() {
        let r = removed_count(&[0.0; 8], &PruneConfig::Tail { tau: 1.0 }).unwrap();
        assert_eq!(r.removed, 0);
        let r = removed_count(&[0.0; 8], &PruneConfig::ZeroTopK { k: 3 }).unwrap();
        assert_eq!(r.removed, 0);
        let r = removed_count(&[0.0, 0.001, 1.0], &PruneConfig::Tail { tau: 0.01 }).unwrap();
        assert_eq!(r.removed, 1);
    }

    #[test]
    fn removed_count_format() {
        let r = RemovedCount {
            removed: 448,
            total: 1152,
            fraction: 448.0 / 1152.0,
        };
        assert_eq!(r.to_string(), "448/1152 (38.89%)");
        let r = RemovedCount {
            removed: 762,
            total: 1152,
            fraction: 762.0 / 1152.0,
        };
        assert_eq!(r.to_string(), "762/1152 (66.15%)");
    }

    #[test]
    fn schedule_cases() {
        for i in 0..50 {
            assert!(should_prune(&PruneSchedule::EveryStep, i, 50).unwrap());
        }
        assert!(should_prune(&PruneSchedule::InitialOnly, 0, 50).unwrap());
        assert!(!should_prune(&PruneSchedule::InitialOnly, 1, 50).unwrap());
        let last5 = PruneSchedule::LastKSteps { k_steps: 5 };
        let fired: Vec<usize> = (0..50).filter(|&i| should_prune(&last5, i, 50).unwrap()).collect();
        assert_eq!(fired, (45..50).collect::<Vec<_>>());
        assert!(matches!(
            should_prune(&PruneSchedule::EveryStep, 50, 50),
            Err(PruneError::OutOfRange { .. })
        ));
        assert!(should_prune(&PruneSchedule::LastKSteps { k_steps: 0 }, 0, 50).is_err());
        assert!(should_prune(&PruneSchedule::LastKSteps { k_steps: 51 }, 0, 50).is_err());
        assert_eq!(PruneSchedule::default_last_k(200), PruneSchedule::LastKSteps { k_steps: 20 });
        assert_eq!(PruneSchedule::default_last_k(55), PruneSchedule::LastKSteps { k_steps: 6 });
    }

    #[test]
    fn config_json_shape() {
        let j = serde_json::to_string(&PruneConfig::Tail { tau: 0.01 }).unwrap();
        assert_eq!(j, r#"{"mode":"tail","tau":0.01}"#);
        let j = serde_json::to_string(&PruneConfig::KeepTopK { k: 3 }).unwrap();
        assert_eq!(j, r#"{"mode":"keep_top_k","k":3}"#);
        assert!(serde_json::from_str::<PruneConfig>(r#"{"mode":"tail","tau":0.1,"k":2}"#).is_err());
        let s: PruneSchedule = serde_json::from_str(r#"{"policy":"last_k_steps","k_steps":4}"#).unwrap();
        assert_eq!(s, PruneSchedule::LastKSteps { k_steps: 4 });
    }

    #[test]
    fn quantile_tau_hits_fraction() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let tau = quantile_tau(&v, 0.4).unwrap();
        assert_eq!(removed_count(&v, &PruneConfig::Tail { tau }).unwrap().removed, 40);
        let tau = quantile_tau(&v, 0.0).unwrap();
        assert_eq!(removed_count(&v, &PruneConfig::Tail { tau }).unwrap().removed, 0);
        assert!(quantile_tau(&v, 1.0).is_err());
    }

    fn vec_with_zeros() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(0.5), Just(-0.5), -3.0f64..3.0], 1..64)
    }

    fn any_config(d: usize) -> impl Strategy<Value = PruneConfig> {
        prop_oneof![
            (0.01f64..2.0).prop_map(|tau| PruneConfig::Tail { tau }),
            (0.01f64..2.0).prop_map(|tau| PruneConfig::Head { tau }),
            (1..=d).prop_map(|k| PruneConfig::KeepTopK { k }),
            (1..=d).prop_map(|k| PruneConfig::ZeroTopK { k }),
        ]
    }

    proptest! {
        #[test]
        fn idempotent_and_support_shrinks((c, cfg) in vec_with_zeros().prop_flat_map(|c| { let d = c.len(); (Just(c), any_config(d)) })) {
            let once = prune(&c, &cfg).unwrap();
            // zero_top_k removes the next k on a second pass
            if !matches!(cfg, PruneConfig::ZeroTopK { .. }) {
                prop_assert_eq!(&once, &prune(&once, &cfg).unwrap());
            }
            for (a, b) in c.iter().zip(&once) {
                prop_assert!(b.to_bits() == a.to_bits() || *b == 0.0);
                if *a == 0.0 { prop_assert_eq!(*b, 0.0); }
            }
        }

        #[test]
        fn head_plus_tail_is_identity(c in prop::collection::vec(-3.0f64..3.0, 1..64), tau in 0.01f64..2.0) {
            prop_assume!(c.iter().all(|x| x.abs() != tau));
            let t = prune(&c, &PruneConfig::Tail { tau }).unwrap();
            let h = prune(&c, &PruneConfig::Head { tau }).unwrap();
            for i in 0..c.len() {
                prop_assert_eq!((t[i] + h[i]).to_bits(), c[i].to_bits());
            }
        }

        #[test]
        fn top_k_complementary((c, k) in vec_with_zeros().prop_flat_map(|c| { let d = c.len(); (Just(c), 1..=d) })) {
            let keep = prune(&c, &PruneConfig::KeepTopK { k }).unwrap();
            let zero = prune(&c, &PruneConfig::ZeroTopK { k }).unwrap();
            for i in 0..c.len() {
                prop_assert_eq!(keep[i] + zero[i], c[i]);
                prop_assert!(keep[i] == 0.0 || zero[i] == 0.0);
            }
        }
    }
}
