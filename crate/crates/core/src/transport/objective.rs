use ndarray::{Array1, Array2, Axis};

use super::maps::{ScalarField, TransportMap};
use crate::error::{FilterError, Result};

/// Triplets `(X^i, X̄^i, Y^i)` where `X̄` is an independent shuffle of `X`
/// and `Y^i ~ h(·|X^i)`.
///
/// `paired_obs[i]` is the simulated observation that belongs to `X̄^i`; it is
/// only consumed by maps with an EnKF block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub x: Array2<f64>,
    pub x_bar: Array2<f64>,
    pub y: Array2<f64>,
    pub paired_obs: Option<Array2<f64>>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(FilterError::Empty("training batch"));
        }
        let rows = self.x.nrows();
        let aligned = self.x_bar.nrows() == rows
            && self.y.nrows() == rows
            && self.paired_obs.as_ref().is_none_or(|p| p.nrows() == rows);
        if !aligned || self.x_bar.ncols() != self.x.ncols() {
            return Err(FilterError::DimensionMismatch {
                context: "training batch shapes",
                expected: rows,
                actual: self.x_bar.nrows().min(self.y.nrows()),
            });
        }
        Ok(())
    }

    /// Builds the batch from row-aligned particles/observations and a
    /// permutation `σ` (so `X̄^i = X^{σ_i}`).
    pub fn from_permutation(particles: &Array2<f64>, observations: &Array2<f64>, permutation: &[usize]) -> Self {
        TrainingBatch {
            x: particles.to_owned(),
            x_bar: particles.select(Axis(0), permutation),
            y: observations.to_owned(),
            paired_obs: Some(observations.select(Axis(0), permutation)),
        }
    }
}

/// The empirical max-min objective split into its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `J = mean f(X,Y) + mean[½‖T(X̄,Y) − X̄‖² − f(T(X̄,Y),Y)]`
    pub value: f64,
    /// `mean[½‖T(X̄,Y) − X̄‖² − f(T(X̄,Y),Y)]`, the part the map minimizes.
    pub map_part: f64,
    /// `mean[f(X,Y) − f(T(X̄,Y),Y)]`, the part the potential maximizes.
    pub potential_part: f64,
}

pub(crate) fn half_sq_dist_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    (a - b).map_axis(Axis(1), |r| 0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

pub(crate) fn mean(v: &Array1<f64>) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluates the empirical objective on `batch`.
pub fn empirical_objective(f: &dyn ScalarField, t: &TransportMap, batch: &TrainingBatch) -> Result<ObjectiveParts> {
    batch.validate()?;
    let mapped = t.eval(&batch.x_bar, batch.paired_obs.as_ref(), &batch.y)?;
    let f_data = f.values(&batch.x, &batch.y)?;
    let f_mapped = f.values(&mapped, &batch.y)?;
    let cost = half_sq_dist_rows(&mapped, &batch.x_bar);
    let map_part = mean(&(&cost - &f_mapped));
    let f_mean = mean(&f_data);
    Ok(ObjectiveParts {
        value: f_mean + map_part,
        map_part,
        potential_part: f_mean - mean(&f_mapped),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseNet, Layer, Linear};
    use crate::rng::RandomSource;
    use crate::transport::maps::Potential;
    use ndarray::array;

    fn batch_1d(x: f64, x_bar: f64, y: f64) -> TrainingBatch {
        TrainingBatch {
            x: array![[x]],
            x_bar: array![[x_bar]],
            y: array![[y]],
            paired_obs: None,
        }
    }

    fn zero_potential(n: usize, m: usize) -> Potential {
        Potential::new(n, m, 4, 1, &RandomSource::new(0)).unwrap()
    }

    #[test]
    fn zero_potential_identity_map_gives_zero() {
        let t = TransportMap::new(2, 1, 4, 1, &RandomSource::new(1)).unwrap();
        let batch = TrainingBatch {
            x: array![[1.0, 2.0], [0.0, -1.0]],
            x_bar: array![[0.0, -1.0], [1.0, 2.0]],
            y: array![[0.3], [0.1]],
            paired_obs: None,
        };
        let j = empirical_objective(&zero_potential(2, 1), &t, &batch).unwrap();
        assert_eq!(j.value, 0.0);
    }

    #[test]
    fn constant_shift_costs_half_squared_norm() {
        let trunk = DenseNet::from_layers(
            vec![Layer::Linear(Linear {
                weight: Array2::zeros((3, 2)),
                bias: array![0.3, -0.4],
            })],
            3,
        )
        .unwrap();
        let t = TransportMap::from_trunk(trunk, 2).unwrap();
        let batch = TrainingBatch {
            x: array![[1.0, 2.0]],
            x_bar: array![[5.0, -1.0]],
            y: array![[0.0]],
            paired_obs: None,
        };
        let j = empirical_objective(&zero_potential(2, 1), &t, &batch).unwrap();
        assert!((j.value - 0.125).abs() < 1e-15);
    }

    #[test]
    fn linear_potential_hand_value() {
        // f(x, y) = x, T = identity, (X, X̄) = (1, 2): 1 + 0 − 2 = −1
        let net = DenseNet::from_layers(
            vec![Layer::Linear(Linear {
                weight: array![[1.0], [0.0]],
                bias: array![0.0],
            })],
            2,
        )
        .unwrap();
        let f = Potential::from_net(net, 1).unwrap();
        let t = TransportMap::new(1, 1, 4, 1, &RandomSource::new(0)).unwrap();
        let j = empirical_objective(&f, &t, &batch_1d(1.0, 2.0, 0.7)).unwrap();
        assert_eq!(j.value, -1.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let t = TransportMap::new(1, 1, 4, 1, &RandomSource::new(0)).unwrap();
        let mut batch = batch_1d(1.0, 2.0, 0.0);
        batch.y = array![[0.0], [1.0]];
        assert!(empirical_objective(&zero_potential(1, 1), &t, &batch).is_err());
    }
}
