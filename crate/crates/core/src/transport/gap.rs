//! Inner-slack diagnostic for a trained pair `(f, T)`.
//!
//! For each evaluation triplet the inner problem
//! `z ↦ ½‖z − X̄‖² − f(z, Y)` is minimized by gradient descent started at
//! `T(X̄, Y)`. The average drop from the value at `T` to the best value found
//! is the slack `δ̃`. When `½‖x‖² − f(x, y)` is `α`-strongly convex the map
//! error is at most `4(δ̃ + ε̃)/α`; the outer slack `ε̃` is not computable, so
//! the reported bound uses `δ̃` only and is a heuristic.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::maps::{ScalarField, TransportMap};
use super::objective::{empirical_objective, half_sq_dist_rows, mean, TrainingBatch};
use crate::error::{FilterError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSolverConfig {
    pub max_steps: usize,
    pub step_size: f64,
    /// Stop a row once its gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        InnerSolverConfig {
            max_steps: 200,
            step_size: 0.1,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapDiagnostic {
    /// `J(f, T)` on the evaluation set.
    pub objective: f64,
    /// Estimate of `J(f, T) − min_S J(f, S)`; nonnegative by construction.
    pub inner_slack: f64,
    /// Final gradient norm of each row's inner problem.
    pub residuals: Vec<f64>,
    /// Rows whose residual stayed above the tolerance.
    pub unconverged: usize,
    /// Pointwise minimizers.
    pub minimizers: Array2<f64>,
    pub alpha: f64,
    /// `4 δ̃ / α`.
    pub map_error_bound: f64,
}

/// Runs the inner solver on every row of `eval_set`.
pub fn estimate_optimality_gap(
    f: &dyn ScalarField,
    t: &TransportMap,
    eval_set: &TrainingBatch,
    cfg: &InnerSolverConfig,
    alpha: f64,
) -> Result<GapDiagnostic> {
    if !(alpha > 0.0) {
        return Err(FilterError::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    if !(cfg.step_size > 0.0) {
        return Err(FilterError::InvalidConfig("inner step size must be positive".into()));
    }
    let objective = empirical_objective(f, t, eval_set)?.value;
    let x_bar = &eval_set.x_bar;
    let y = &eval_set.y;
    let start = t.eval(x_bar, eval_set.paired_obs.as_ref(), y)?;

    let inner_value = |z: &Array2<f64>| -> Result<(Array1<f64>, Array2<f64>)> {
        let (fv, gf) = f.values_and_grad_x(z, y)?;
        let value = half_sq_dist_rows(z, x_bar) - &fv;
        let grad = z - x_bar - &gf;
        Ok((value, grad))
    };
    let row_norms = |g: &Array2<f64>| g.map_axis(Axis(1), |r| r.dot(&r).sqrt());

    let mut z = start;
    let (start_value, mut grad) = inner_value(&z)?;
    let mut best = z.clone();
    let mut best_value = start_value.clone();
    let mut norms = row_norms(&grad);
    let mut active: Vec<bool> = norms.iter().map(|&g| g >= cfg.grad_tol).collect();

    for _ in 0..cfg.max_steps {
        if !active.iter().any(|&a| a) {
            break;
        }
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            if active[i] {
                row.scaled_add(-cfg.step_size, &grad.row(i));
            }
        }
        let (value, g) = inner_value(&z)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite("inner minimization"));
        }
        grad = g;
        norms = row_norms(&grad);
        for i in 0..z.nrows() {
            if !active[i] {
                continue;
            }
            if value[i] < best_value[i] {
                best_value[i] = value[i];
                best.row_mut(i).assign(&z.row(i));
            }
            if norms[i] < cfg.grad_tol {
                active[i] = false;
            }
        }
    }

    let mut slack_rows = Array1::zeros(start_value.len());
    Zip::from(&mut slack_rows)
        .and(&start_value)
        .and(&best_value)
        .for_each(|s, &a, &b| *s = a - b);
    let inner_slack = mean(&slack_rows);
    Ok(GapDiagnostic {
        objective,
        inner_slack,
        residuals: norms.to_vec(),
        unconverged: active.iter().filter(|&&a| a).count(),
        minimizers: best,
        alpha,
        map_error_bound: 4.0 * inner_slack / alpha,
    })
}
