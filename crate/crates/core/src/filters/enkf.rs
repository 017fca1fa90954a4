use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{FilterError, Result};
use crate::model::StateSpaceModel;
use crate::transport::EnKFBlock;

/// Regularization `Γ = σ² I` of the gain solve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnKFConfig {
    /// `σ²`; `None` takes the model's observation-noise variance.
    pub regularization: Option<f64>,
}

impl EnKFConfig {
    pub fn with_regularization(regularization: f64) -> Self {
        EnKFConfig {
            regularization: Some(regularization),
        }
    }

    pub fn resolve(&self, model: &dyn StateSpaceModel) -> Result<f64> {
        let gamma = self
            .regularization
            .or_else(|| model.observation_noise_variance())
            .ok_or_else(|| FilterError::InvalidConfig("EnKF regularization not set and model has no noise variance".into()))?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(FilterError::InvalidConfig(format!("EnKF regularization must be positive, got {gamma}")));
        }
        Ok(gamma)
    }
}

/// Perturbed-observation analysis `X^i + K (y − Y^i)` with the ensemble gain
/// `K = C^{xy} (C^{yy} + Γ)⁻¹`.
pub fn enkf_analysis(ens: &Ensemble, obs_ens: &Array2<f64>, y: &[f64], regularization: f64) -> Result<Ensemble> {
    if ens.is_weighted() {
        return Err(FilterError::InvalidEnsemble("EnKF analysis expects an unweighted ensemble".into()));
    }
    let block = EnKFBlock::estimate(ens.particles(), obs_ens, regularization)?.freeze();
    Ensemble::new(block.apply_shared(ens.particles(), obs_ens, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, RandomSource};
    use ndarray::array;

    #[test]
    fn huge_regularization_leaves_particles() {
        let ens = Ensemble::new(array![[1.0, 0.0], [2.0, 1.0], [0.5, -1.0]]).unwrap();
        let obs = array![[1.1], [1.9], [0.2]];
        let out = enkf_analysis(&ens, &obs, &[40.0], 1e12).unwrap();
        for (a, b) in out.particles().iter().zip(ens.particles().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matching_observations_leave_particles() {
        let ens = Ensemble::new(array![[1.0], [2.0], [4.0]]).unwrap();
        let obs = array![[3.0], [3.0], [3.0]];
        let out = enkf_analysis(&ens, &obs, &[3.0], 1.0).unwrap();
        assert_eq!(out, ens);
    }

    #[test]
    fn scalar_gaussian_posterior() {
        // prior N(0,1), Y = X + N(0,1), y = 1.4: posterior N(0.7, 0.5)
        let n = 100_000;
        let mut s = RandomSource::new(8).stream();
        let x = Array2::from_shape_simple_fn((n, 1), || standard_normal(&mut s));
        let obs = &x + &Array2::from_shape_simple_fn((n, 1), || standard_normal(&mut s));
        let out = enkf_analysis(&Ensemble::new(x).unwrap(), &obs, &[1.4], 1e-9).unwrap();
        let mean = out.mean()[0];
        let var = out.covariance()[[0, 0]];
        assert!((mean - 0.7).abs() / 0.7 < 0.03, "{mean}");
        assert!((var - 0.5).abs() / 0.5 < 0.03, "{var}");
    }

    #[test]
    fn gain_error_shrinks_with_ensemble_size() {
        // X ~ N(0, 2), Y = 3X + N(0, 1): K = 6 / 19
        let exact = 6.0 / 19.0;
        let err = |n: usize, seed: u64| {
            let mut s = RandomSource::new(seed).stream();
            let x = Array2::from_shape_simple_fn((n, 1), || 2f64.sqrt() * standard_normal(&mut s));
            let y = &x * 3.0 + &Array2::from_shape_simple_fn((n, 1), || standard_normal(&mut s));
            (EnKFBlock::estimate(&x, &y, 1e-12).unwrap().gain()[[0, 0]] - exact).abs()
        };
        let small: f64 = (0..20).map(|s| err(1_000, s)).sum();
        let large: f64 = (0..20).map(|s| err(100_000, 100 + s)).sum();
        assert!(large < small, "{large} vs {small}");
    }
}
