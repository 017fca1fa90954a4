//! Dense symmetric positive-definite solves for the small `m × m` systems of
//! the Kalman gain.

use ndarray::{Array2, ArrayView2};

use crate::error::{FilterError, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: ArrayView2<'_, f64>, context: &'static str) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky of a non-square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(FilterError::NotPositiveDefinite(context));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `X A = B` for SPD `A` (i.e. returns `B A⁻¹`).
pub fn solve_right_spd(b: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, context: &'static str) -> Result<Array2<f64>> {
    let l = cholesky(a, context)?;
    let n = l.nrows();
    // X A = B  <=>  A Xᵀ = Bᵀ; solve each column of Bᵀ (row of B).
    let mut out = b.to_owned();
    for mut row in out.rows_mut() {
        // forward: L z = r
        for i in 0..n {
            let mut s = row[i];
            for k in 0..i {
                s -= l[[i, k]] * row[k];
            }
            row[i] = s / l[[i, i]];
        }
        // backward: Lᵀ x = z
        for i in (0..n).rev() {
            let mut s = row[i];
            for k in i + 1..n {
                s -= l[[k, i]] * row[k];
            }
            row[i] = s / l[[i, i]];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let b = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]];
        let x = solve_right_spd(b.view(), a.view(), "test").unwrap();
        let back = x.dot(&a);
        for (u, v) in back.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view(), "test").is_err());
    }
}
