use serde::{Deserialize, Serialize};

use super::{add_gaussian_noise, gaussian_log_likelihood, gaussian_vector};
use crate::error::{FilterError, Result};
use crate::model::StateSpaceModel;
use crate::rng::Stream;

/// `X_t = (1−α) X_{t−1} + 2λ V_t`, `Y_t = X_t^{⊙p} + λ W_t`, `X_0 ~ N(0, I_n)`.
///
/// `p = 2` is the bimodal dynamic benchmark, `p = 1` its linear-Gaussian
/// variant and `p = 3` the cubic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicPolynomialModel {
    pub dim: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub exponent: u32,
}

impl Default for DynamicPolynomialModel {
    fn default() -> Self {
        DynamicPolynomialModel::with_exponent(2)
    }
}

impl DynamicPolynomialModel {
    pub fn with_exponent(exponent: u32) -> Self {
        DynamicPolynomialModel {
            dim: 1,
            alpha: 0.1,
            lambda: 0.1_f64.sqrt(),
            exponent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0
            || !(self.alpha > 0.0 && self.alpha < 1.0)
            || !(self.lambda > 0.0)
            || !(1..=3).contains(&self.exponent)
        {
            return Err(FilterError::InvalidConfig(format!("invalid dynamic polynomial parameters: {self:?}")));
        }
        Ok(())
    }

    /// The noiseless part `(1−α) x`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (1.0 - self.alpha) * v).collect()
    }

    pub fn observation_mean(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.powi(self.exponent as i32)).collect()
    }

    /// `(2λ)² / (1 − (1−α)²)`.
    pub fn stationary_variance(&self) -> f64 {
        let a = 1.0 - self.alpha;
        4.0 * self.lambda * self.lambda / (1.0 - a * a)
    }

    /// One transition step `(1−α)x + 2λV`.
    pub fn step(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut next = self.drift(x);
        add_gaussian_noise(&mut next, 2.0 * self.lambda, rng);
        next
    }
}

impl StateSpaceModel for DynamicPolynomialModel {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn transition(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        self.step(x, rng)
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut y = self.observation_mean(x);
        add_gaussian_noise(&mut y, self.lambda, rng);
        y
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        gaussian_log_likelihood(y, &self.observation_mean(x), self.lambda * self.lambda)
    }

    fn sample_initial(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(gaussian_vector(&vec![0.0; self.dim], 1.0, rng))
    }

    fn observation_noise_variance(&self) -> Option<f64> {
        Some(self.lambda * self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Ensemble;
    use crate::model::{propagate_ensemble, simulate_truth};
    use crate::rng::RandomSource;
    use ndarray::{Array2, Axis};

    #[test]
    fn noiseless_limit_contracts() {
        let model = DynamicPolynomialModel::with_exponent(2);
        assert_eq!(model.drift(&[1.0, -2.0]), vec![0.9, -1.8]);
    }

    #[test]
    fn conditional_std_is_two_lambda() {
        let model = DynamicPolynomialModel::with_exponent(2);
        let n = 100_000;
        let ens = Ensemble::new(Array2::zeros((n, 1))).unwrap();
        let out = propagate_ensemble(&model, &ens, &RandomSource::new(8)).unwrap();
        let std = out.covariance()[[0, 0]].sqrt();
        let expected = 2.0 * 0.1_f64.sqrt();
        assert!((std - expected).abs() / expected < 0.01, "{std}");
    }

    #[test]
    fn propagated_mean_contracts() {
        let model = DynamicPolynomialModel {
            dim: 3,
            ..DynamicPolynomialModel::with_exponent(2)
        };
        let n = 1000;
        let mut rows = Array2::zeros((n, 3));
        rows.column_mut(0).fill(1.0);
        rows.column_mut(1).fill(-2.0);
        rows.column_mut(2).fill(5.0);
        let ens = Ensemble::new(rows).unwrap();
        let input_mean = ens.mean();
        let out = propagate_ensemble(&model, &ens, &RandomSource::new(1)).unwrap();
        let out_mean = out.particles().mean_axis(Axis(0)).unwrap();
        let tol = 3.0 * 2.0 * model.lambda / (n as f64).sqrt();
        for k in 0..3 {
            assert!((out_mean[k] - 0.9 * input_mean[k]).abs() < tol);
        }
    }

    #[test]
    fn truth_reaches_stationary_variance() {
        let model = DynamicPolynomialModel::with_exponent(2);
        let traj = simulate_truth(&model, 10_000, &RandomSource::new(12)).unwrap();
        let xs = traj.states.column(0);
        let mean = xs.mean().unwrap();
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        let expected = model.stationary_variance();
        assert!((expected - 0.4 / 0.19).abs() < 1e-12);
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }
}
