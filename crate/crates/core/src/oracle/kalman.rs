use ndarray::{Array1, Array2};

use crate::error::{FilterError, Result};
use crate::linalg::solve_right_spd;

/// Jointly Gaussian `X ~ N(m, P)`, `Y = H X + W`, `W ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSpec {
    pub prior_mean: Array1<f64>,
    pub prior_cov: Array2<f64>,
    /// `m × n`.
    pub h: Array2<f64>,
    pub noise_cov: Array2<f64>,
}

impl LinearGaussianSpec {
    fn check(&self) -> Result<()> {
        let n = self.prior_mean.len();
        let m = self.h.nrows();
        let ok = self.prior_cov.dim() == (n, n) && self.h.ncols() == n && self.noise_cov.dim() == (m, m);
        if ok {
            Ok(())
        } else {
            Err(FilterError::InvalidConfig("inconsistent linear-Gaussian shapes".into()))
        }
    }
}

/// Gaussian conditional `X | Y = y`: mean `m + K (y − H m)` and covariance
/// `P − K H P` with `K = P Hᵀ (H P Hᵀ + R)⁻¹`.
pub fn exact_kalman_posterior(spec: &LinearGaussianSpec, y: &[f64]) -> Result<(Array1<f64>, Array2<f64>)> {
    spec.check()?;
    if y.len() != spec.h.nrows() {
        return Err(FilterError::DimensionMismatch {
            context: "kalman observation",
            expected: spec.h.nrows(),
            actual: y.len(),
        });
    }
    let c_xy = spec.prior_cov.dot(&spec.h.t());
    let c_yy = spec.h.dot(&c_xy) + &spec.noise_cov;
    let gain = solve_right_spd(c_xy.view(), c_yy.view(), "Cov(Y)")?;
    let innovation = Array1::from(y.to_vec()) - spec.h.dot(&spec.prior_mean);
    let mean = &spec.prior_mean + &gain.dot(&innovation);
    let cov = &spec.prior_cov - &gain.dot(&c_xy.t());
    Ok((mean, cov))
}

/// `X_t = A X_{t−1} + V_t`, `V_t ~ N(0, Q)`, observed as in [`LinearGaussianSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDynamics {
    pub a: Array2<f64>,
    pub q: Array2<f64>,
    pub h: Array2<f64>,
    pub noise_cov: Array2<f64>,
    pub initial_mean: Array1<f64>,
    pub initial_cov: Array2<f64>,
}

impl LinearGaussianDynamics {
    /// Scalar `X_t = a X_{t−1} + N(0, q)`, `Y_t = h X_t + N(0, r)`.
    pub fn scalar(a: f64, q: f64, h: f64, r: f64, m0: f64, p0: f64) -> Self {
        let s = |v: f64| Array2::from_elem((1, 1), v);
        LinearGaussianDynamics {
            a: s(a),
            q: s(q),
            h: s(h),
            noise_cov: s(r),
            initial_mean: Array1::from_elem(1, m0),
            initial_cov: s(p0),
        }
    }
}

/// Filtering means and covariances after each observation row.
pub fn kalman_filter(
    dynamics: &LinearGaussianDynamics,
    observations: &Array2<f64>,
) -> Result<Vec<(Array1<f64>, Array2<f64>)>> {
    let mut mean = dynamics.initial_mean.clone();
    let mut cov = dynamics.initial_cov.clone();
    let mut out = Vec::with_capacity(observations.nrows());
    for y in observations.rows() {
        let spec = LinearGaussianSpec {
            prior_mean: dynamics.a.dot(&mean),
            prior_cov: dynamics.a.dot(&cov).dot(&dynamics.a.t()) + &dynamics.q,
            h: dynamics.h.clone(),
            noise_cov: dynamics.noise_cov.clone(),
        };
        let (m, c) = exact_kalman_posterior(&spec, &y.to_vec())?;
        out.push((m.clone(), c.clone()));
        mean = m;
        cov = c;
    }
    Ok(out)
}
