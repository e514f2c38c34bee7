use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::GradientEstimate;

/// `F(w) = 1/2 * sum_i c_i (w_i - o_i)^2` with noisy gradient oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub curvature: Vec<f64>,
    pub optimum: Vec<f64>,
    pub noise_std: f64,
}

impl QuadraticObjective {
    pub fn new(curvature: Vec<f64>, optimum: Vec<f64>, noise_std: f64) -> Self {
        assert_eq!(curvature.len(), optimum.len(), "curvature/optimum length");
        assert!(curvature.iter().all(|&c| c > 0.0), "curvature must be positive");
        assert!(noise_std >= 0.0);
        Self {
            curvature,
            optimum,
            noise_std,
        }
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }

    /// Smoothness constant `L`.
    pub fn smoothness(&self) -> f64 {
        self.curvature.iter().copied().fold(0.0, f64::max)
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.curvature
            .iter()
            .zip(w.iter().zip(&self.optimum))
            .map(|(c, (x, o))| 0.5 * c * (x - o) * (x - o))
            .sum()
    }

    /// Noise-free gradient.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.curvature
            .iter()
            .zip(w.iter().zip(&self.optimum))
            .map(|(c, (x, o))| c * (x - o))
            .collect()
    }
}

/// Exact gradient plus `N(0, noise_std^2)` per coordinate.
pub fn quadratic_grad<R: Rng + ?Sized>(obj: &QuadraticObjective, params: &[f64], rng: &mut R) -> GradientEstimate {
    let mut values = obj.gradient(params);
    if obj.noise_std > 0.0 {
        let normal = Normal::new(0.0, obj.noise_std).expect("finite std");
        for v in &mut values {
            *v += normal.sample(rng);
        }
    }
    GradientEstimate {
        values,
        batch_indices: Vec::new(),
    }
}
