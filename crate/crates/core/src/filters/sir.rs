use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{FilterError, Result};
use crate::model::StateSpaceModel;
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SIRConfig {
    pub scheme: ResamplingScheme,
    /// Resample only when `ESS < threshold · N`. `None` resamples every step.
    pub ess_threshold: Option<f64>,
}

impl SIRConfig {
    pub fn validate(&self) -> Result<()> {
        match self.ess_threshold {
            Some(t) if !(t > 0.0 && t <= 1.0) => Err(FilterError::InvalidConfig(format!(
                "ESS threshold must lie in (0, 1], got {t}"
            ))),
            _ => Ok(()),
        }
    }

    /// The opt-in adaptive variant with threshold 0.5.
    pub fn adaptive() -> Self {
        SIRConfig {
            ess_threshold: Some(0.5),
            ..SIRConfig::default()
        }
    }
}

/// Normalizes log-weights with the log-sum-exp shift.
pub fn normalize_log_weights(log_w: &[f64], step: usize) -> Result<Vec<f64>> {
    if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(FilterError::InvalidWeights("log-weight is NaN or +inf".into()));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(FilterError::DegenerateWeights { step });
    }
    let unnorm: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|v| v / total).collect())
}

/// `w^i ∝ w^i_prev · h(y | X^i)`; an unweighted ensemble has uniform prior weights.
pub fn sir_weights(model: &dyn StateSpaceModel, ens: &Ensemble, y: &[f64], step: usize) -> Result<Vec<f64>> {
    let mut log_w = Vec::with_capacity(ens.len());
    for i in 0..ens.len() {
        let x = ens.particle(i).to_vec();
        let prior = ens.weights().map_or(0.0, |w| w[i].ln());
        log_w.push(prior + model.log_likelihood(y, &x)?);
    }
    normalize_log_weights(&log_w, step)
}

/// `1 / Σ w²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Draws `N` indices i.i.d. from `weights` by inverse-CDF lookup.
pub fn multinomial_indices(weights: &[f64], count: usize, rng: &RandomSource) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let last = weights.len() - 1;
    let mut stream = rng.stream();
    (0..count)
        .map(|_| {
            let u = stream.random::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Unweighted ensemble of `N` rows drawn with replacement according to `weights`.
pub fn multinomial_resample(ens: &Ensemble, weights: &[f64], rng: &RandomSource) -> Result<Ensemble> {
    crate::ensemble::validate_weights(weights, ens.len())?;
    let idx = multinomial_indices(weights, ens.len(), rng);
    let particles: Array2<f64> = ens.particles().select(ndarray::Axis(0), &idx);
    Ensemble::new(particles)
}
