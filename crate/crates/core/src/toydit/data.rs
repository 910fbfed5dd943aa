use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use super::ToyError;

pub const MIXTURE_RADIUS: f64 = 5.0;
pub const MIXTURE_SIGMA: f64 = 0.3;

/// Isotropic Gaussians with means evenly spaced on a circle.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub means: Vec<[f64; 2]>,
    pub sigma: f64,
}

impl Mixture {
    pub fn new(n_classes: usize) -> Result<Self, ToyError> {
        if n_classes < 2 {
            return Err(ToyError::BadClassCount(n_classes));
        }
        let means = (0..n_classes)
            .map(|k| {
                let a = TAU * k as f64 / n_classes as f64;
                [MIXTURE_RADIUS * a.cos(), MIXTURE_RADIUS * a.sin()]
            })
            .collect();
        Ok(Mixture {
            means,
            sigma: MIXTURE_SIGMA,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn draw<R: Rng>(&self, label: usize, rng: &mut R) -> [f64; 2] {
        let m = self.means[label];
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        [m[0] + self.sigma * a, m[1] + self.sigma * b]
    }

    /// Uniform label, then a point from that class.
    pub fn draw_labeled<R: Rng>(&self, rng: &mut R) -> ([f64; 2], usize) {
        let label = rng.random_range(0..self.n_classes());
        (self.draw(label, rng), label)
    }

    /// Index of the nearest mean; ties go to the lower index.
    pub fn nearest(&self, x: [f64; 2]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, m) in self.means.iter().enumerate() {
            let d = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }
}
