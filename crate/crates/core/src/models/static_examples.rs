//! Static (single-conditioning) examples. Their transition kernels are the
//! identity, so one filter step is one Bayes update of the prior.

use serde::{Deserialize, Serialize};

use super::{add_gaussian_noise, gaussian_log_likelihood, gaussian_vector};
use crate::error::{FilterError, Result};
use crate::model::StateSpaceModel;
use crate::rng::{standard_normal, Stream};

/// `X ~ N(0, I_n)`, `Y = ½ X⊙X + λ_w W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSquareModel {
    pub dim: usize,
    /// Observation noise standard deviation `λ_w`.
    pub noise_std: f64,
}

impl Default for StaticSquareModel {
    fn default() -> Self {
        StaticSquareModel { dim: 2, noise_std: 0.4 }
    }
}

impl StaticSquareModel {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.noise_std > 0.0) {
            return Err(FilterError::InvalidConfig(format!("static_square needs dim >= 1 and noise_std > 0: {self:?}")));
        }
        Ok(())
    }

    pub fn observation_mean(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 0.5 * v * v).collect()
    }
}

impl StateSpaceModel for StaticSquareModel {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn transition(&self, x: &[f64], _rng: &mut Stream) -> Vec<f64> {
        x.to_vec()
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut y = Self::observation_mean(x);
        add_gaussian_noise(&mut y, self.noise_std, rng);
        y
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        gaussian_log_likelihood(y, &Self::observation_mean(x), self.noise_std * self.noise_std)
    }

    fn sample_initial(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(gaussian_vector(&vec![0.0; self.dim], 1.0, rng))
    }

    fn observation_noise_variance(&self) -> Option<f64> {
        Some(self.noise_std * self.noise_std)
    }
}

/// `X ~ ½N(−m·1, σ²I) + ½N(+m·1, σ²I)`, `Y = X + σ_w W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BimodalPriorModel {
    pub dim: usize,
    /// Distance `m` of each mode from the origin along every coordinate.
    pub mode_offset: f64,
    /// Standard deviation `σ` of each prior mode.
    pub mode_std: f64,
    /// Observation noise standard deviation `σ_w`.
    pub noise_std: f64,
}

impl Default for BimodalPriorModel {
    fn default() -> Self {
        BimodalPriorModel {
            dim: 2,
            mode_offset: 1.0,
            mode_std: 0.4,
            noise_std: 0.4,
        }
    }
}

impl BimodalPriorModel {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.mode_std > 0.0) || !(self.noise_std > 0.0) || !self.mode_offset.is_finite() {
            return Err(FilterError::InvalidConfig(format!("invalid static_bimodal parameters: {self:?}")));
        }
        Ok(())
    }

    /// Prior density at `x`.
    pub fn prior_density(&self, x: &[f64]) -> f64 {
        let var = self.mode_std * self.mode_std;
        let mode = |sign: f64| {
            gaussian_log_likelihood(x, &vec![sign * self.mode_offset; x.len()], var)
                .expect("matching dims")
                .exp()
        };
        0.5 * mode(-1.0) + 0.5 * mode(1.0)
    }
}

impl StateSpaceModel for BimodalPriorModel {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn transition(&self, x: &[f64], _rng: &mut Stream) -> Vec<f64> {
        x.to_vec()
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut y = x.to_vec();
        add_gaussian_noise(&mut y, self.noise_std, rng);
        y
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        gaussian_log_likelihood(y, x, self.noise_std * self.noise_std)
    }

    fn sample_initial(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        use rand::Rng;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        Ok((0..self.dim)
            .map(|_| sign * self.mode_offset + self.mode_std * standard_normal(rng))
            .collect())
    }

    fn observation_noise_variance(&self) -> Option<f64> {
        Some(self.noise_std * self.noise_std)
    }
}
