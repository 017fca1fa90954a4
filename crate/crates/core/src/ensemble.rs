//! Particle ensembles and simulated trajectories.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{FilterError, Result};

/// Tolerance on the sum of normalized weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// An empirical distribution: `N` particles in `R^n`, one per row.
///
/// Uniform weights are represented by `weights == None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Array2<f64>,
    weights: Option<Vec<f64>>,
}

impl Ensemble {
    /// Builds an unweighted ensemble, rejecting empty or non-finite input.
    pub fn new(particles: Array2<f64>) -> Result<Self> {
        let (n_particles, dim) = particles.dim();
        if n_particles == 0 || dim == 0 {
            return Err(FilterError::InvalidEnsemble(format!(
                "need at least one particle and one dimension, got {n_particles}x{dim}"
            )));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::InvalidEnsemble("non-finite particle entry".into()));
        }
        Ok(Ensemble {
            particles,
            weights: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(FilterError::InvalidEnsemble("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let particles = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| FilterError::InvalidEnsemble(e.to_string()))?;
        Ensemble::new(particles)
    }

    /// Attaches normalized weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights, self.len())?;
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particles(&self) -> &Array2<f64> {
        &self.particles
    }

    pub fn into_particles(self) -> Array2<f64> {
        self.particles
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    pub fn particle(&self, i: usize) -> ArrayView1<'_, f64> {
        self.particles.row(i)
    }

    /// Weighted mean of the particles (uniform when unweighted).
    pub fn mean(&self) -> Array1<f64> {
        match &self.weights {
            None => self.particles.mean_axis(Axis(0)).expect("nonempty ensemble"),
            Some(w) => {
                let mut m = Array1::zeros(self.dim());
                for (row, &wi) in self.particles.rows().into_iter().zip(w) {
                    m.scaled_add(wi, &row);
                }
                m
            }
        }
    }

    /// Population (1/N) covariance of the unweighted particles.
    pub fn covariance(&self) -> Array2<f64> {
        let mean = self.mean();
        let centered = &self.particles - &mean;
        centered.t().dot(&centered) / self.len() as f64
    }
}

pub(crate) fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(FilterError::InvalidWeights(format!(
            "expected {n} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(FilterError::InvalidWeights("negative or non-finite weight".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(FilterError::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// A simulated truth run: states `X_t` and observations `Y_t` for `t = 1..=T`,
/// plus the initial state `X_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<usize>,
    pub initial_state: Array1<f64>,
    pub states: Array2<f64>,
    pub observations: Array2<f64>,
}

impl Trajectory {
    pub fn new(
        times: Vec<usize>,
        initial_state: Array1<f64>,
        states: Array2<f64>,
        observations: Array2<f64>,
    ) -> Result<Self> {
        let steps = times.len();
        if states.nrows() != steps || observations.nrows() != steps {
            return Err(FilterError::DimensionMismatch {
                context: "trajectory length",
                expected: steps,
                actual: states.nrows().max(observations.nrows()),
            });
        }
        if states.ncols() != initial_state.len() {
            return Err(FilterError::DimensionMismatch {
                context: "trajectory state dim",
                expected: initial_state.len(),
                actual: states.ncols(),
            });
        }
        let all_finite = initial_state
            .iter()
            .chain(states.iter())
            .chain(observations.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(FilterError::NonFinite("trajectory"));
        }
        Ok(Trajectory {
            times,
            initial_state,
            states,
            observations,
        })
    }

    /// A trajectory of a single observation with no recorded truth beyond `state`.
    pub fn single_observation(state: Array1<f64>, observation: Array1<f64>) -> Result<Self> {
        let n = state.len();
        let m = observation.len();
        Trajectory::new(
            vec![1],
            state.clone(),
            state.into_shape_with_order((1, n)).expect("row"),
            observation.into_shape_with_order((1, m)).expect("row"),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.ncols()
    }

    /// Keeps the first `steps` steps.
    pub fn truncated(&self, steps: usize) -> Trajectory {
        let steps = steps.min(self.len());
        Trajectory {
            times: self.times[..steps].to_vec(),
            initial_state: self.initial_state.clone(),
            states: self.states.slice(ndarray::s![..steps, ..]).to_owned(),
            observations: self.observations.slice(ndarray::s![..steps, ..]).to_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(Ensemble::new(Array2::zeros((0, 2))).is_err());
        assert!(Ensemble::new(Array2::zeros((3, 0))).is_err());
        assert!(Ensemble::new(array![[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let e = Ensemble::new(array![[0.0], [1.0]]).unwrap();
        assert!(e.clone().with_weights(vec![0.5, 0.6]).is_err());
        assert!(e.clone().with_weights(vec![1.5, -0.5]).is_err());
        assert!(e.clone().with_weights(vec![1.0]).is_err());
        let w = e.with_weights(vec![0.25, 0.75]).unwrap();
        assert_eq!(w.mean(), array![0.75]);
    }

    #[test]
    fn covariance_is_population_covariance() {
        let e = Ensemble::new(array![[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(e.covariance(), array![[1.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn trajectory_lengths_must_agree() {
        let r = Trajectory::new(vec![1, 2], array![0.0], Array2::zeros((2, 1)), Array2::zeros((1, 1)));
        assert!(r.is_err());
    }
}
