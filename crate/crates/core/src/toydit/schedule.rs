use super::ToyError;

/// Linear beta schedule, indexed by `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(n_timesteps: usize, beta_min: f64, beta_max: f64) -> Result<Self, ToyError> {
        if n_timesteps < 2 {
            return Err(ToyError::BadSchedule(format!("need at least 2 timesteps, got {n_timesteps}")));
        }
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
            return Err(ToyError::BadSchedule(format!(
                "need 0 < beta_min < beta_max < 1, got {beta_min} and {beta_max}"
            )));
        }
        let last = (n_timesteps - 1) as f64;
        let betas: Vec<f64> = (0..n_timesteps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / last)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(DiffusionSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn n_timesteps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize, ToyError> {
        if t == 0 || t > self.n_timesteps() {
            return Err(ToyError::BadTimestep {
                t,
                n_timesteps: self.n_timesteps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, ToyError> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, ToyError> {
        Ok(self.alphas[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, ToyError> {
        Ok(self.alpha_bars[self.check(t)?])
    }

    /// Forward noising `sqrt(ab) x0 + sqrt(1 - ab) eps`.
    pub fn q_sample(&self, x0: [f64; 2], t: usize, eps: [f64; 2]) -> Result<[f64; 2], ToyError> {
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok([a * x0[0] + b * eps[0], a * x0[1] + b * eps[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_monotone() {
        let s = DiffusionSchedule::new(200, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1).unwrap(), 1e-4);
        assert!((s.beta(200).unwrap() - 0.02).abs() < 1e-18);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.beta(0).is_err() && s.beta(201).is_err());
        assert!(DiffusionSchedule::new(10, 0.02, 1e-4).is_err());
        assert!(DiffusionSchedule::new(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn q_sample_cases() {
        let s = DiffusionSchedule::new(50, 1e-4, 0.02).unwrap();
        let ab = s.alpha_bar(7).unwrap();
        assert_eq!(s.q_sample([2.0, -1.0], 7, [0.0, 0.0]).unwrap(), [2.0 * ab.sqrt(), -ab.sqrt()]);
        let x = s.q_sample([1.0, 1.0], 1, [0.5, -0.5]).unwrap();
        // alpha_bar_1 = 1 - 1e-4
        let (a, b) = ((1.0f64 - 1e-4).sqrt(), 1e-2);
        assert!((x[0] - (a + 0.5 * b)).abs() < 1e-12);
        assert!((x[1] - (a - 0.5 * b)).abs() < 1e-12);
        assert!(s.q_sample([0.0; 2], 0, [0.0; 2]).is_err());
    }
}
