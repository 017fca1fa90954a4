//! Stochastic gradient ascent-descent on the empirical max-min objective.
//!
//! Each outer iteration samples a batch of triplets `(X^i, X^{σ_i}, Y^i)`,
//! takes `inner_iters` Adam steps on the map minimizing
//! `mean[½‖T(X̄,Y) − X̄‖² − f(T(X̄,Y),Y)]`, then one Adam step on the potential
//! minimizing `mean[−f(X,Y) + f(T(X̄,Y),Y)]`.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::maps::{join, Potential, ScalarField, TransportMap};
use super::objective::{half_sq_dist_rows, mean};
use crate::error::{FilterError, Result};
use crate::nn::{AdamState, Gradient};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_f: f64,
    pub lr_t: f64,
    pub inner_iters: usize,
    /// Outer iterations at the first time step.
    pub outer_iters: usize,
    /// Lower bound for the halving schedule.
    pub outer_floor: usize,
    /// Halve the outer iteration count after every time step.
    pub halve_each_step: bool,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_f: 1e-3,
            lr_t: 2e-3,
            inner_iters: 10,
            outer_iters: 1024,
            outer_floor: 64,
            halve_each_step: true,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_f > 0.0 && self.lr_t > 0.0 && self.inner_iters >= 1 && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(FilterError::InvalidConfig(format!("invalid training config: {self:?}")))
        }
    }

    /// Outer iterations at 1-based time step `step`.
    pub fn outer_for_step(&self, step: usize) -> usize {
        if !self.halve_each_step {
            return self.outer_iters;
        }
        let shift = step.saturating_sub(1).min(63) as u32;
        (self.outer_iters >> shift).max(self.outer_floor.min(self.outer_iters))
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_iter: usize,
    /// Objective on the batch after the map steps, before the potential step.
    pub objective: f64,
    pub map_part: f64,
    pub potential_part: f64,
    /// Map terms on the batch before the first and after the last inner step.
    pub map_part_before_inner: f64,
    pub map_part_after_inner: f64,
}

/// The learned pair together with its optimizer states. Persisting this
/// across time steps warm-starts every conditioning.
#[derive(Debug, Clone)]
pub struct ConditionalOt {
    pub potential: Potential,
    pub map: TransportMap,
    adam_f: AdamState,
    adam_t: AdamState,
    last_trace: Vec<TraceRow>,
}

impl ConditionalOt {
    pub fn new(potential: Potential, map: TransportMap) -> Self {
        let adam_f = AdamState::new(&potential.net);
        let adam_t = AdamState::new(&map.trunk);
        ConditionalOt {
            potential,
            map,
            adam_f,
            adam_t,
            last_trace: Vec::new(),
        }
    }

    /// Trace of the most recent [`fit`](Self::fit), including a run that diverged.
    pub fn last_trace(&self) -> &[TraceRow] {
        &self.last_trace
    }

    /// Trains on row-aligned `particles` and simulated `observations` for
    /// `cfg.outer_iters` outer iterations.
    pub fn fit(
        &mut self,
        particles: &Array2<f64>,
        observations: &Array2<f64>,
        cfg: &TrainConfig,
        rng: &RandomSource,
    ) -> Result<Vec<TraceRow>> {
        cfg.validate()?;
        let n = particles.nrows();
        if observations.nrows() != n {
            return Err(FilterError::DimensionMismatch {
                context: "fit: particle/observation rows",
                expected: n,
                actual: observations.nrows(),
            });
        }
        if cfg.batch_size > n {
            return Err(FilterError::InvalidConfig(format!(
                "batch size {} exceeds particle count {n}",
                cfg.batch_size
            )));
        }
        self.last_trace.clear();
        let mut permutation: Vec<usize> = (0..n).collect();
        permutation.shuffle(&mut rng.fork_named("permutation").stream());
        let mut batch_stream = rng.fork_named("batches").stream();
        let use_paired = self.map.enkf.is_some();

        for outer in 0..cfg.outer_iters {
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| batch_stream.random_range(0..n)).collect();
            let shuffled: Vec<usize> = idx.iter().map(|&i| permutation[i]).collect();
            let x = particles.select(Axis(0), &idx);
            let x_bar = particles.select(Axis(0), &shuffled);
            let y = observations.select(Axis(0), &idx);
            let paired = use_paired.then(|| observations.select(Axis(0), &shuffled));
            let feature = self.map.feature(&x_bar, paired.as_ref(), &y)?;

            let row = self.outer_step(outer, &x, &x_bar, &y, feature, cfg)?;
            self.last_trace.push(row);
        }
        Ok(self.last_trace.clone())
    }

    fn diverged(&self, iteration: usize) -> FilterError {
        FilterError::Diverged { iteration }
    }

    fn outer_step(
        &mut self,
        outer: usize,
        x: &Array2<f64>,
        x_bar: &Array2<f64>,
        y: &Array2<f64>,
        feature: Array2<f64>,
        cfg: &TrainConfig,
    ) -> Result<TraceRow> {
        let b = x.nrows() as f64;
        let mut map_before = f64::NAN;
        for inner in 0..cfg.inner_iters {
            let tape = self.map.forward_from_feature(feature.clone(), y)?;
            let (f_vals, grad_x) = self.potential.values_and_grad_x(&tape.output, y)?;
            if inner == 0 {
                map_before = mean(&(&half_sq_dist_rows(&tape.output, x_bar) - &f_vals));
            }
            let cotangent = (&tape.output - x_bar - &grad_x) / b;
            let (grad, _) = self.map.trunk.backward_from(&tape.trunk, &cotangent, true)?;
            let grad: Gradient = grad.expect("parameter gradients requested");
            self.adam_t
                .step(&mut self.map.trunk, &grad, cfg.lr_t)
                .map_err(|_| self.diverged(outer))?;
        }

        let mapped = self.map.forward_from_feature(feature, y)?.output;
        let stacked_x = concatenate(Axis(0), &[x.view(), mapped.view()]).expect("same widths");
        let stacked_y = concatenate(Axis(0), &[y.view(), y.view()]).expect("same widths");
        let tape = self.potential.net.forward_with_tape(&join(&stacked_x, &stacked_y)?)?;
        let rows = x.nrows();
        let f_data: Array1<f64> = tape.output.slice(s![..rows, 0]).to_owned();
        let f_mapped: Array1<f64> = tape.output.slice(s![rows.., 0]).to_owned();
        let map_part = mean(&(&half_sq_dist_rows(&mapped, x_bar) - &f_mapped));
        let f_mean = mean(&f_data);
        let objective = f_mean + map_part;
        if !objective.is_finite() {
            return Err(self.diverged(outer));
        }

        let mut cotangent = Array2::from_elem((2 * rows, 1), 1.0 / b);
        cotangent.slice_mut(s![..rows, ..]).fill(-1.0 / b);
        let (grad, _) = self.potential.net.backward_from(&tape, &cotangent, true)?;
        let grad = grad.expect("parameter gradients requested");
        self.adam_f
            .step(&mut self.potential.net, &grad, cfg.lr_f)
            .map_err(|_| self.diverged(outer))?;

        Ok(TraceRow {
            outer_iter: outer,
            objective,
            map_part,
            potential_part: f_mean - mean(&f_mapped),
            map_part_before_inner: map_before,
            map_part_after_inner: map_part,
        })
    }
}

/// Trains a fresh optimizer pair on `(f, T)` and returns the updated maps
/// with the per-iteration trace.
pub fn fit_conditional_map(
    particles: &Array2<f64>,
    observations: &Array2<f64>,
    init: (Potential, TransportMap),
    cfg: &TrainConfig,
    rng: &RandomSource,
) -> Result<(Potential, TransportMap, Vec<TraceRow>)> {
    let mut solver = ConditionalOt::new(init.0, init.1);
    let trace = solver.fit(particles, observations, cfg, rng)?;
    Ok((solver.potential, solver.map, trace))
}

/// Row-wise `T(X^i, y)` for one realized observation `y`; `paired_obs[i]` is
/// particle `i`'s own simulated observation.
pub fn apply_map(
    t: &TransportMap,
    particles: &Array2<f64>,
    y: &[f64],
    paired_obs: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    if y.len() != t.obs_dim() {
        return Err(FilterError::DimensionMismatch {
            context: "apply_map observation",
            expected: t.obs_dim(),
            actual: y.len(),
        });
    }
    let y_rows = super::enkf_block::broadcast_rows(y, particles.nrows());
    t.eval(particles, paired_obs, &y_rows)
}
