//! The state-space model interface and the ensemble-level sampling operations
//! shared by every filter.

use ndarray::{Array1, Array2};

use crate::ensemble::{Ensemble, Trajectory};
use crate::error::{FilterError, Result};
use crate::rng::{RandomSource, Stream};

/// A hidden Markov model `X_t ~ a(·|X_{t-1})`, `Y_t ~ h(·|X_t)`.
///
/// `transition` is the kernel the filters propagate particles with.
/// `truth_transition` is what [`simulate_truth`] uses; the two differ only for
/// models whose filters add artificial dynamics noise.
pub trait StateSpaceModel: Send + Sync + std::fmt::Debug {
    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    fn transition(&self, x: &[f64], rng: &mut Stream) -> Vec<f64>;

    fn truth_transition(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        self.transition(x, rng)
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Vec<f64>;

    /// `log h(y|x)`.
    fn log_likelihood(&self, _y: &[f64], _x: &[f64]) -> Result<f64> {
        Err(FilterError::Unsupported("observation log-density"))
    }

    /// Draws `X_0 ~ π_0` for the truth.
    fn sample_initial(&self, _rng: &mut Stream) -> Result<Vec<f64>> {
        Err(FilterError::Unsupported("initial distribution"))
    }

    /// Draws an initial particle. Defaults to `π_0`.
    fn sample_particle_prior(&self, rng: &mut Stream) -> Result<Vec<f64>> {
        self.sample_initial(rng)
    }

    /// Observation noise variance `σ_w²`, used as the default EnKF regularization.
    fn observation_noise_variance(&self) -> Option<f64> {
        None
    }
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(FilterError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

fn row_slice(m: &Array2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Propagates each particle through the filter transition kernel.
///
/// Particle `i` draws from `rng.fork(i)`.
pub fn propagate_ensemble(model: &dyn StateSpaceModel, ens: &Ensemble, rng: &RandomSource) -> Result<Ensemble> {
    let sources: Vec<RandomSource> = (0..ens.len()).map(|i| rng.fork(i as u64)).collect();
    propagate_with_sources(model, ens, &sources)
}

/// Propagates particle `i` with `sources[i]`.
pub fn propagate_with_sources(
    model: &dyn StateSpaceModel,
    ens: &Ensemble,
    sources: &[RandomSource],
) -> Result<Ensemble> {
    if ens.is_weighted() {
        return Err(FilterError::InvalidEnsemble("propagation expects an unweighted ensemble".into()));
    }
    check_dim("propagate: state dim", model.state_dim(), ens.dim())?;
    check_dim("propagate: stream count", ens.len(), sources.len())?;
    let n = model.state_dim();
    let mut out = Array2::zeros((ens.len(), n));
    for (i, src) in sources.iter().enumerate() {
        let mut stream = src.stream();
        let next = model.transition(&row_slice(ens.particles(), i), &mut stream);
        check_dim("propagate: transition output", n, next.len())?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite("transition"));
        }
        out.row_mut(i).assign(&Array1::from(next));
    }
    Ensemble::new(out)
}

/// Simulates one observation per particle; row `i` uses `rng.fork(i)`.
pub fn sample_observation_ensemble(
    model: &dyn StateSpaceModel,
    ens: &Ensemble,
    rng: &RandomSource,
) -> Result<Array2<f64>> {
    if ens.is_weighted() {
        return Err(FilterError::InvalidEnsemble("observation sampling expects an unweighted ensemble".into()));
    }
    check_dim("observe: state dim", model.state_dim(), ens.dim())?;
    let m = model.obs_dim();
    let mut out = Array2::zeros((ens.len(), m));
    for i in 0..ens.len() {
        let mut stream = rng.fork(i as u64).stream();
        let y = model.observe(&row_slice(ens.particles(), i), &mut stream);
        check_dim("observe: observation output", m, y.len())?;
        out.row_mut(i).assign(&Array1::from(y));
    }
    Ok(out)
}

/// Draws `count` particles from the model's particle prior.
pub fn sample_prior_ensemble(model: &dyn StateSpaceModel, count: usize, rng: &RandomSource) -> Result<Ensemble> {
    let n = model.state_dim();
    let mut out = Array2::zeros((count, n));
    for i in 0..count {
        let mut stream = rng.fork(i as u64).stream();
        let x = model.sample_particle_prior(&mut stream)?;
        check_dim("prior sample", n, x.len())?;
        out.row_mut(i).assign(&Array1::from(x));
    }
    Ensemble::new(out)
}

/// Draws `X_0 ~ π_0` and then alternates truth transition and observation
/// for `steps` steps.
pub fn simulate_truth(model: &dyn StateSpaceModel, steps: usize, rng: &RandomSource) -> Result<Trajectory> {
    if steps == 0 {
        return Err(FilterError::InvalidConfig("simulate_truth needs at least one step".into()));
    }
    let n = model.state_dim();
    let m = model.obs_dim();
    let x0 = model.sample_initial(&mut rng.fork_named("initial").stream())?;
    check_dim("initial state", n, x0.len())?;
    let mut dyn_stream = rng.fork_named("truth-dynamics").stream();
    let mut obs_stream = rng.fork_named("truth-observation").stream();
    let mut states = Array2::zeros((steps, n));
    let mut observations = Array2::zeros((steps, m));
    let mut x = x0.clone();
    for t in 0..steps {
        x = model.truth_transition(&x, &mut dyn_stream);
        check_dim("truth transition output", n, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite("truth transition"));
        }
        let y = model.observe(&x, &mut obs_stream);
        check_dim("truth observation output", m, y.len())?;
        states.row_mut(t).assign(&Array1::from(x.clone()));
        observations.row_mut(t).assign(&Array1::from(y));
    }
    Trajectory::new((1..=steps).collect(), Array1::from(x0), states, observations)
}
