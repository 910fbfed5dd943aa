//! Parsers for the compact `--prune` and `--schedule` arguments.

use condscope::pruning::{PruneConfig, PruneSchedule};

use crate::error::{usage, CliError};

/// A threshold given literally or as a target removal percentage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSpec {
    Fixed(f64),
    /// `AUTO40`: remove about 40% of the coordinates.
    Auto(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneSpec {
    Tail(TauSpec),
    Head(TauSpec),
    KeepTopK(usize),
    ZeroTopK(usize),
}

impl PruneSpec {
    /// Concrete config once any automatic threshold has been chosen.
    pub fn resolve(self, auto_tau: impl FnOnce(f64) -> Result<f64, CliError>) -> Result<PruneConfig, CliError> {
        let tau = |t: TauSpec| match t {
            TauSpec::Fixed(v) => Ok(v),
            TauSpec::Auto(f) => auto_tau(f),
        };
        let cfg = match self {
            PruneSpec::Tail(t) => PruneConfig::Tail { tau: tau(t)? },
            PruneSpec::Head(t) => PruneConfig::Head { tau: tau(t)? },
            PruneSpec::KeepTopK(k) => PruneConfig::KeepTopK { k },
            PruneSpec::ZeroTopK(k) => PruneConfig::ZeroTopK { k },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn auto_fraction(self) -> Option<f64> {
        match self {
            PruneSpec::Tail(TauSpec::Auto(f)) | PruneSpec::Head(TauSpec::Auto(f)) => Some(f),
            _ => None,
        }
    }
}

fn parse_tau(s: &str) -> Result<TauSpec, CliError> {
    if let Some(pct) = s.strip_prefix("AUTO") {
        let pct: f64 = pct.parse().map_err(|_| usage(format!("bad AUTO percentage '{s}'")))?;
        if !(0.0..100.0).contains(&pct) {
            return Err(usage(format!("AUTO percentage must be in [0, 100), got {pct}")));
        }
        return Ok(TauSpec::Auto(pct / 100.0));
    }
    let v: f64 = s.parse().map_err(|_| usage(format!("bad threshold '{s}'")))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(usage(format!("threshold must be positive, got {s}")));
    }
    Ok(TauSpec::Fixed(v))
}

fn parse_k(s: &str) -> Result<usize, CliError> {
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => Err(usage(format!("k must be a positive integer, got '{s}'"))),
    }
}

/// `mode:value`, e.g. `tail:0.01`, `tail:AUTO40`, `zero-top-k:6`.
pub fn parse_prune(s: &str) -> Result<PruneSpec, CliError> {
    let (mode, value) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("--prune expects mode:value, got '{s}'")))?;
    match mode {
        "tail" => Ok(PruneSpec::Tail(parse_tau(value)?)),
        "head" => Ok(PruneSpec::Head(parse_tau(value)?)),
        "keep-top-k" | "keep_top_k" => Ok(PruneSpec::KeepTopK(parse_k(value)?)),
        "zero-top-k" | "zero_top_k" => Ok(PruneSpec::ZeroTopK(parse_k(value)?)),
        _ => Err(usage(format!("unknown prune mode '{mode}'"))),
    }
}

/// `every`, `initial`, `lastk` (k = ceil(n/10)) or `lastk:K`.
pub fn parse_schedule(s: &str, n_steps: usize) -> Result<PruneSchedule, CliError> {
    let sched = match s {
        "every" => PruneSchedule::EveryStep,
        "initial" => PruneSchedule::InitialOnly,
        "lastk" => PruneSchedule::default_last_k(n_steps),
        _ => match s.strip_prefix("lastk:") {
            Some(k) => PruneSchedule::LastKSteps {
                k_steps: k.parse().map_err(|_| usage(format!("bad step count in '{s}'")))?,
            },
            None => return Err(usage(format!("unknown schedule '{s}'"))),
        },
    };
    sched.validate(n_steps)?;
    Ok(sched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prune_specs() {
        assert_eq!(parse_prune("tail:0.01").unwrap(), PruneSpec::Tail(TauSpec::Fixed(0.01)));
        assert_eq!(parse_prune("tail:AUTO40").unwrap(), PruneSpec::Tail(TauSpec::Auto(0.4)));
        assert_eq!(parse_prune("zero-top-k:6").unwrap(), PruneSpec::ZeroTopK(6));
        for bad in ["tail", "tail:-1", "tail:AUTO100", "keep-top-k:0", "middle:3", "head:AUTOx"] {
            assert!(matches!(parse_prune(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn auto_resolves_through_callback() {
        let cfg = parse_prune("tail:AUTO40").unwrap().resolve(|f| Ok(f / 10.0)).unwrap();
        assert_eq!(cfg, PruneConfig::Tail { tau: 0.04 });
    }

    #[test]
    fn schedules() {
        assert_eq!(parse_schedule("every", 200).unwrap(), PruneSchedule::EveryStep);
        assert_eq!(parse_schedule("lastk", 200).unwrap(), PruneSchedule::LastKSteps { k_steps: 20 });
        assert_eq!(parse_schedule("lastk:7", 200).unwrap(), PruneSchedule::LastKSteps { k_steps: 7 });
        for bad in ["lastk:0", "lastk:201", "sometimes", "lastk:x"] {
            assert!(matches!(parse_schedule(bad, 200), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
