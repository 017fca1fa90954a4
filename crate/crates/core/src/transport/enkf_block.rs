use ndarray::{Array2, Axis};

use crate::error::{FilterError, Result};
use crate::linalg::solve_right_spd;

/// The affine perturbed-observation map `x ↦ x + K (y − y_paired)`.
///
/// The gain is estimated once from a prior ensemble and its simulated
/// observations, then frozen. Only frozen blocks may be applied.
#[derive(Debug, Clone, PartialEq)]
pub struct EnKFBlock {
    gain: Array2<f64>,
    frozen: bool,
}

impl EnKFBlock {
    /// Ensemble gain `K = C^{xy} (C^{yy} + Γ)⁻¹` with `Γ = regularization · I`
    /// and `1/N` covariances.
    pub fn estimate(particles: &Array2<f64>, observations: &Array2<f64>, regularization: f64) -> Result<Self> {
        let n_particles = particles.nrows();
        if observations.nrows() != n_particles {
            return Err(FilterError::DimensionMismatch {
                context: "gain: particle/observation rows",
                expected: n_particles,
                actual: observations.nrows(),
            });
        }
        if n_particles == 0 {
            return Err(FilterError::Empty("ensemble gain"));
        }
        if !(regularization > 0.0) {
            return Err(FilterError::InvalidConfig(format!(
                "EnKF regularization must be positive, got {regularization}"
            )));
        }
        let count = n_particles as f64;
        let x_mean = particles.mean_axis(Axis(0)).expect("nonempty");
        let y_mean = observations.mean_axis(Axis(0)).expect("nonempty");
        let dx = particles - &x_mean;
        let dy = observations - &y_mean;
        let c_xy = dx.t().dot(&dy) / count;
        let mut c_yy = dy.t().dot(&dy) / count;
        for k in 0..c_yy.nrows() {
            c_yy[[k, k]] += regularization;
        }
        let gain = solve_right_spd(c_xy.view(), c_yy.view(), "C^yy + Γ")?;
        Ok(EnKFBlock { gain, frozen: false })
    }

    pub fn from_gain(gain: Array2<f64>) -> Self {
        EnKFBlock { gain, frozen: false }
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// `n × m` gain matrix.
    pub fn gain(&self) -> &Array2<f64> {
        &self.gain
    }

    pub fn state_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.gain.ncols()
    }

    /// Row-wise `x_i + K (y_i − paired_i)`.
    pub fn apply(&self, x: &Array2<f64>, paired_obs: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
        if !self.frozen {
            return Err(FilterError::UnfrozenBlock);
        }
        if x.ncols() != self.state_dim() || paired_obs.ncols() != self.obs_dim() || y.ncols() != self.obs_dim() {
            return Err(FilterError::DimensionMismatch {
                context: "EnKF block widths",
                expected: self.state_dim() + 2 * self.obs_dim(),
                actual: x.ncols() + paired_obs.ncols() + y.ncols(),
            });
        }
        if paired_obs.nrows() != x.nrows() || y.nrows() != x.nrows() {
            return Err(FilterError::DimensionMismatch {
                context: "EnKF block rows",
                expected: x.nrows(),
                actual: paired_obs.nrows().min(y.nrows()),
            });
        }
        let innovation = y - paired_obs;
        Ok(x + &innovation.dot(&self.gain.t()))
    }

    /// Same as [`apply`](Self::apply) with one observation `y` shared by every row.
    pub fn apply_shared(&self, x: &Array2<f64>, paired_obs: &Array2<f64>, y: &[f64]) -> Result<Array2<f64>> {
        let y_rows = broadcast_rows(y, x.nrows());
        self.apply(x, paired_obs, &y_rows)
    }
}

pub(crate) fn broadcast_rows(y: &[f64], rows: usize) -> Array2<f64> {
    let m = y.len();
    Array2::from_shape_fn((rows, m), |(_, j)| y[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, RandomSource};
    use ndarray::array;

    #[test]
    fn zero_gain_is_identity() {
        let block = EnKFBlock::from_gain(Array2::zeros((2, 1))).freeze();
        let x = array![[1.0, 2.0]];
        assert_eq!(block.apply(&x, &array![[5.0]], &array![[-3.0]]).unwrap(), x);
    }

    #[test]
    fn scalar_arithmetic() {
        let block = EnKFBlock::from_gain(array![[0.5]]).freeze();
        let out = block.apply(&array![[1.0]], &array![[2.0]], &array![[4.0]]).unwrap();
        assert_eq!(out, array![[2.0]]);
    }

    #[test]
    fn unfrozen_block_is_rejected() {
        let block = EnKFBlock::from_gain(array![[0.5]]);
        assert!(matches!(
            block.apply(&array![[1.0]], &array![[2.0]], &array![[4.0]]),
            Err(FilterError::UnfrozenBlock)
        ));
    }

    #[test]
    fn gain_converges_to_kalman_gain() {
        // X ~ N(0,1), Y = X + N(0,1): K = Cov(X,Y)/Var(Y) = 1/2
        let n = 100_000;
        let mut s = RandomSource::new(21).stream();
        let x = Array2::from_shape_simple_fn((n, 1), || standard_normal(&mut s));
        let y = &x + &Array2::from_shape_simple_fn((n, 1), || standard_normal(&mut s));
        let block = EnKFBlock::estimate(&x, &y, 1e-12).unwrap();
        let k = block.gain()[[0, 0]];
        assert!((k - 0.5).abs() / 0.5 < 0.02, "{k}");
    }

    #[test]
    fn huge_regularization_kills_the_gain() {
        let x = array![[1.0], [2.0], [4.0]];
        let y = array![[0.5], [2.5], [3.0]];
        let block = EnKFBlock::estimate(&x, &y, 1e12).unwrap().freeze();
        let out = block.apply_shared(&x, &y, &[10.0]).unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
