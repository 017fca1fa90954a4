use serde::{Deserialize, Serialize};

use super::ode::{lorenz63_rhs, lorenz96_rhs, rk4_step};
use super::{add_gaussian_noise, gaussian_log_likelihood, gaussian_vector};
use crate::error::{FilterError, Result};
use crate::model::StateSpaceModel;
use crate::rng::Stream;

/// Lorenz 63 with partial observation `(X(1), X(3)) + σ_obs W`.
///
/// The truth is integrated without noise. Filters add `N(0, σ_added² I)` after
/// the ODE substeps of every assimilation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lorenz63Model {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub substeps: usize,
    pub obs_std: f64,
    pub added_noise_std: f64,
    pub truth_mean: [f64; 3],
    pub particle_mean: [f64; 3],
    pub initial_var: f64,
}

impl Default for Lorenz63Model {
    fn default() -> Self {
        Lorenz63Model {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.02,
            substeps: 5,
            obs_std: 10.0_f64.sqrt(),
            added_noise_std: 1.0,
            truth_mean: [25.0; 3],
            particle_mean: [0.0; 3],
            initial_var: 10.0,
        }
    }
}

impl Lorenz63Model {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.substeps >= 1
            && self.obs_std > 0.0
            && self.added_noise_std >= 0.0
            && self.initial_var >= 0.0
            && [self.sigma, self.rho, self.beta].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(FilterError::InvalidConfig(format!("invalid lorenz63 parameters: {self:?}")))
        }
    }

    /// Integrates the noiseless ODE over one assimilation interval.
    pub fn flow(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut state = x.to_vec();
        for _ in 0..self.substeps {
            state = rk4_step(|v| lorenz63_rhs(v, self.sigma, self.rho, self.beta), &state, self.dt)?;
        }
        Ok(state)
    }

    fn flow_or_nan(&self, x: &[f64]) -> Vec<f64> {
        self.flow(x).unwrap_or_else(|_| vec![f64::NAN; 3])
    }
}

impl StateSpaceModel for Lorenz63Model {
    fn state_dim(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn transition(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut next = self.flow_or_nan(x);
        add_gaussian_noise(&mut next, self.added_noise_std, rng);
        next
    }

    fn truth_transition(&self, x: &[f64], _rng: &mut Stream) -> Vec<f64> {
        self.flow_or_nan(x)
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut y = vec![x[0], x[2]];
        add_gaussian_noise(&mut y, self.obs_std, rng);
        y
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        gaussian_log_likelihood(y, &[x[0], x[2]], self.obs_std * self.obs_std)
    }

    fn sample_initial(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(gaussian_vector(&self.truth_mean, self.initial_var.sqrt(), rng))
    }

    fn sample_particle_prior(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(gaussian_vector(&self.particle_mean, self.initial_var.sqrt(), rng))
    }

    fn observation_noise_variance(&self) -> Option<f64> {
        Some(self.obs_std * self.obs_std)
    }
}

/// Lorenz 96 with additive dynamics noise and a fixed subset of observed
/// components.
///
/// Dynamics noise enters as `σ √dt V` after every RK4 substep, for the truth
/// and for the filters alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lorenz96Model {
    pub dim: usize,
    pub forcing: f64,
    pub dt: f64,
    pub substeps: usize,
    pub noise_std: f64,
    /// Zero-based indices of the observed components.
    pub observed: Vec<usize>,
    pub initial_mean: f64,
    pub initial_var: f64,
}

impl Default for Lorenz96Model {
    fn default() -> Self {
        Lorenz96Model {
            dim: 9,
            forcing: 2.0,
            dt: 0.01,
            substeps: 5,
            noise_std: 1.0,
            observed: vec![0, 1, 3, 4, 6, 7],
            initial_mean: 25.0,
            initial_var: 100.0,
        }
    }
}

impl Lorenz96Model {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dim >= 4
            && self.dt > 0.0
            && self.substeps >= 1
            && self.noise_std > 0.0
            && self.initial_var >= 0.0
            && !self.observed.is_empty()
            && self.observed.iter().all(|&k| k < self.dim);
        if ok {
            Ok(())
        } else {
            Err(FilterError::InvalidConfig(format!("invalid lorenz96 parameters: {self:?}")))
        }
    }

    fn integrate(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut state = x.to_vec();
        let step_noise = self.noise_std * self.dt.sqrt();
        for _ in 0..self.substeps {
            state = match rk4_step(|v| lorenz96_rhs(v, self.forcing).expect("dim >= 4"), &state, self.dt) {
                Ok(s) => s,
                Err(_) => return vec![f64::NAN; self.dim],
            };
            add_gaussian_noise(&mut state, step_noise, rng);
        }
        state
    }
}

impl StateSpaceModel for Lorenz96Model {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.observed.len()
    }

    fn transition(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        self.integrate(x, rng)
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut y: Vec<f64> = self.observed.iter().map(|&k| x[k]).collect();
        add_gaussian_noise(&mut y, self.noise_std, rng);
        y
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        let mean: Vec<f64> = self.observed.iter().map(|&k| x[k]).collect();
        gaussian_log_likelihood(y, &mean, self.noise_std * self.noise_std)
    }

    fn sample_initial(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(gaussian_vector(&vec![self.initial_mean; self.dim], self.initial_var.sqrt(), rng))
    }

    fn observation_noise_variance(&self) -> Option<f64> {
        Some(self.noise_std * self.noise_std)
    }
}
