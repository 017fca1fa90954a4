//! Right-hand sides of the Lorenz systems and a classical RK4 integrator.

use crate::error::{FilterError, Result};

/// Lorenz 63 vector field `(σ(x₂−x₁), x₁(ρ−x₃)−x₂, x₁x₂−βx₃)`.
pub fn lorenz63_rhs(x: &[f64], sigma: f64, rho: f64, beta: f64) -> Vec<f64> {
    vec![
        sigma * (x[1] - x[0]),
        x[0] * (rho - x[2]) - x[1],
        x[0] * x[1] - beta * x[2],
    ]
}

/// Lorenz 96 vector field with cyclic indexing:
/// `ẋ_k = (x_{k+1} − x_{k−2}) x_{k−1} − x_k + F`.
pub fn lorenz96_rhs(x: &[f64], forcing: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 4 {
        return Err(FilterError::InvalidConfig(format!("Lorenz 96 needs n >= 4, got {n}")));
    }
    Ok((0..n)
        .map(|k| {
            let next = x[(k + 1) % n];
            let prev = x[(k + n - 1) % n];
            let prev2 = x[(k + n - 2) % n];
            (next - prev2) * prev - x[k] + forcing
        })
        .collect())
}

/// One classical fourth-order Runge–Kutta step of size `dt`.
pub fn rk4_step<F>(rhs: F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(FilterError::InvalidConfig(format!("rk4 step size must be positive, got {dt}")));
    }
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(ai, bi)| ai + s * bi).collect() };
    let k1 = rhs(x);
    let k2 = rhs(&axpy(x, 0.5 * dt, &k1));
    let k3 = rhs(&axpy(x, 0.5 * dt, &k2));
    let k4 = rhs(&axpy(x, dt, &k3));
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::NonFinite("rk4 step"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lorenz63_hand_values() {
        assert_eq!(lorenz63_rhs(&[0.0, 0.0, 0.0], 10.0, 28.0, 8.0 / 3.0), vec![0.0, 0.0, 0.0]);
        let v = lorenz63_rhs(&[1.0, 1.0, 1.0], 10.0, 28.0, 8.0 / 3.0);
        assert_abs_diff_eq!(v[0], 0.0);
        assert_abs_diff_eq!(v[1], 26.0);
        assert_abs_diff_eq!(v[2], -5.0 / 3.0, epsilon = 1e-15);
        assert_eq!(lorenz63_rhs(&[1.0, 0.0, 0.0], 10.0, 28.0, 8.0 / 3.0), vec![-10.0, 28.0, 0.0]);
    }

    #[test]
    fn lorenz96_hand_values() {
        // only k=1 sees the nonzero entry through x_k itself; every product term vanishes
        assert_eq!(lorenz96_rhs(&[1.0, 0.0, 0.0, 0.0], 0.0).unwrap(), vec![-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(lorenz96_rhs(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap(), vec![-5.0, -3.0, 3.0, -7.0]);
        assert_eq!(lorenz96_rhs(&[0.0; 6], 2.0).unwrap(), vec![2.0; 6]);
        assert!(lorenz96_rhs(&[0.0; 3], 2.0).is_err());
    }

    #[test]
    fn lorenz96_homogeneous_equilibrium() {
        for n in 4..20 {
            let f = 2.0 + n as f64 * 0.37;
            assert!(lorenz96_rhs(&vec![f; n], f).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rk4_zero_field_is_stationary() {
        let x = vec![1.5, -2.0];
        assert_eq!(rk4_step(|v| vec![0.0; v.len()], &x, 0.3).unwrap(), x);
    }

    #[test]
    fn rk4_matches_exponential_taylor() {
        let y = rk4_step(|v| v.to_vec(), &[1.0], 0.1).unwrap()[0];
        let taylor = 1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0;
        assert_abs_diff_eq!(y, taylor, epsilon = 1e-15);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let global_error = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut x = vec![1.0];
            for _ in 0..steps {
                x = rk4_step(|v| v.to_vec(), &x, dt).unwrap();
            }
            (x[0] - std::f64::consts::E).abs()
        };
        let ratio = global_error(10) / global_error(20);
        assert!((ratio - 16.0).abs() < 1.6, "ratio {ratio}");
    }

    #[test]
    fn rk4_rejects_bad_step() {
        assert!(rk4_step(|v| v.to_vec(), &[1.0], 0.0).is_err());
        assert!(rk4_step(|v| v.iter().map(|x| x * 1e300).collect(), &[1e10], 1.0).is_err());
    }
}
