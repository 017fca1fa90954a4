//! Ground-truth posteriors: quadrature on a grid, closed-form Kalman, and a
//! large-ensemble SIR reference for dynamic models.

mod grid;
mod kalman;

use ndarray::Array2;

pub use grid::{
    grid_bayes_update, grid_from_log_density, grid_moments, grid_sample, GridAxis, GridPosterior, GridSpec,
    MASS_TOLERANCE,
};
pub use kalman::{exact_kalman_posterior, kalman_filter, LinearGaussianDynamics, LinearGaussianSpec};

use crate::ensemble::Trajectory;
use crate::error::{FilterError, Result};
use crate::filters::{run_filter, MethodConfig, RunOptions, SIRConfig};
use crate::model::StateSpaceModel;
use crate::rng::RandomSource;

/// Particle count of the SIR reference.
pub const REFERENCE_PARTICLES: usize = 100_000;

/// Runs SIR with `n_ref` particles and returns the posterior samples after
/// every step, each thinned to at most `record_cap` rows.
pub fn reference_sir_posterior(
    model: &dyn StateSpaceModel,
    trajectory: &Trajectory,
    n_ref: usize,
    rng: &RandomSource,
    record_cap: Option<usize>,
) -> Result<Vec<Array2<f64>>> {
    let method = MethodConfig::Sir(SIRConfig::default());
    let options = RunOptions {
        record_cap,
        initial: None,
    };
    let run = run_filter(&method, model, trajectory, n_ref, rng, &options)?;
    if let Some(f) = run.failure {
        return Err(if f.degenerate_weights {
            FilterError::DegenerateWeights { step: f.step }
        } else {
            FilterError::InvalidConfig(format!("reference run failed at step {}: {}", f.step, f.message))
        });
    }
    Ok(run.ensembles.into_iter().skip(1).map(|e| e.into_particles()).collect())
}
