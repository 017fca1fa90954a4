//! EnKF, SIR and OTPF as interchangeable step/run drivers.
//!
//! Every method propagates first and then conditions on the realized
//! observation. Within step `t` the propagation noise and the simulated
//! observations come from the same forked streams for every method, so two
//! methods started from the same ensemble and seed see identical prior
//! ensembles.

mod enkf;
mod sir;

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use enkf::{enkf_analysis, EnKFConfig};
pub use sir::{
    effective_sample_size, multinomial_indices, multinomial_resample, normalize_log_weights, sir_weights,
    ResamplingScheme, SIRConfig,
};

use crate::ensemble::{Ensemble, Trajectory};
use crate::error::{FilterError, Result};
use crate::model::{propagate_ensemble, sample_observation_ensemble, sample_prior_ensemble, StateSpaceModel};
use crate::rng::RandomSource;
use crate::transport::{apply_map, ConditionalOt, EnKFBlock, Potential, TraceRow, TrainConfig, TransportMap};

/// Width and residual-block count of one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub width: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OTPFConfig {
    pub train: TrainConfig,
    pub potential: NetShape,
    pub map: NetShape,
    pub enkf_block: bool,
    /// `Γ` of the EnKF block; `None` takes the model's noise variance.
    pub enkf_regularization: Option<f64>,
}

impl Default for OTPFConfig {
    fn default() -> Self {
        OTPFConfig::defaults_for("dynamic_bimodal")
    }
}

impl OTPFConfig {
    /// Per-experiment settings of the benchmark suite.
    pub fn defaults_for(model_id: &str) -> Self {
        let dynamic = TrainConfig::default();
        let shape = |width, blocks| NetShape { width, blocks };
        match model_id {
            "static_square" | "static_bimodal" => OTPFConfig {
                train: TrainConfig {
                    lr_f: 1e-3,
                    lr_t: 1e-3,
                    outer_iters: 2000,
                    halve_each_step: false,
                    batch_size: 128,
                    ..dynamic
                },
                potential: shape(32, 1),
                map: shape(32, 1),
                enkf_block: false,
                enkf_regularization: None,
            },
            "lorenz63" => OTPFConfig {
                train: TrainConfig {
                    lr_f: 5e-2,
                    lr_t: 1e-2,
                    ..dynamic
                },
                potential: shape(64, 2),
                map: shape(64, 2),
                enkf_block: true,
                enkf_regularization: None,
            },
            "lorenz96" => OTPFConfig {
                train: TrainConfig {
                    lr_f: 1e-3,
                    lr_t: 1e-1,
                    batch_size: 128,
                    ..dynamic
                },
                potential: shape(32, 2),
                map: shape(32, 2),
                enkf_block: true,
                enkf_regularization: None,
            },
            _ => OTPFConfig {
                train: dynamic,
                potential: shape(32, 2),
                map: shape(32, 2),
                enkf_block: true,
                enkf_regularization: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.potential.width == 0 || self.map.width == 0 {
            return Err(FilterError::InvalidConfig("network width must be at least 1".into()));
        }
        Ok(())
    }
}

/// A filtering method with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Enkf(EnKFConfig),
    Sir(SIRConfig),
    Otpf(OTPFConfig),
}

impl MethodConfig {
    pub const NAMES: [&'static str; 3] = ["enkf", "sir", "otpf"];

    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Enkf(_) => "enkf",
            MethodConfig::Sir(_) => "sir",
            MethodConfig::Otpf(_) => "otpf",
        }
    }

    /// Default configuration of `name` for the model `model_id`.
    pub fn default_for(name: &str, model_id: &str) -> Option<MethodConfig> {
        Some(match name {
            "enkf" => MethodConfig::Enkf(EnKFConfig::default()),
            "sir" => MethodConfig::Sir(SIRConfig::default()),
            "otpf" => MethodConfig::Otpf(OTPFConfig::defaults_for(model_id)),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Enkf(c) => c.regularization.map_or(Ok(()), |g| {
                if g > 0.0 {
                    Ok(())
                } else {
                    Err(FilterError::InvalidConfig(format!("EnKF regularization must be positive, got {g}")))
                }
            }),
            MethodConfig::Sir(c) => c.validate(),
            MethodConfig::Otpf(c) => c.validate(),
        }
    }
}

/// Everything a method carries from one step to the next.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub ensemble: Ensemble,
    /// Number of completed steps.
    pub step: usize,
    ot: Option<ConditionalOt>,
}

impl FilterState {
    /// Starts from `ensemble`; OTPF networks are initialized from `rng`.
    pub fn new(method: &MethodConfig, model: &dyn StateSpaceModel, ensemble: Ensemble, rng: &RandomSource) -> Result<Self> {
        method.validate()?;
        let ot = match method {
            MethodConfig::Otpf(cfg) => {
                let (n, m) = (model.state_dim(), model.obs_dim());
                let nets = rng.fork_named("networks");
                let f = Potential::new(n, m, cfg.potential.width, cfg.potential.blocks, &nets.fork_named("f"))?;
                let t = TransportMap::new(n, m, cfg.map.width, cfg.map.blocks, &nets.fork_named("T"))?;
                Some(ConditionalOt::new(f, t))
            }
            _ => None,
        };
        Ok(FilterState { ensemble, step: 0, ot })
    }

    /// The trained pair of an OTPF state.
    pub fn transport(&self) -> Option<&ConditionalOt> {
        self.ot.as_ref()
    }
}

/// Per-step record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepDiagnostics {
    pub step: usize,
    /// ESS of the importance weights before resampling (SIR only).
    pub ess: Option<f64>,
    pub resampled: bool,
    pub trace: Vec<TraceRow>,
    pub conditioning_seconds: f64,
    pub step_seconds: f64,
}

fn propagate(model: &dyn StateSpaceModel, ens: &Ensemble, rng: &RandomSource) -> Result<Ensemble> {
    match ens.weights() {
        None => propagate_ensemble(model, ens, rng),
        Some(w) => {
            let bare = Ensemble::new(ens.particles().clone())?;
            propagate_ensemble(model, &bare, rng)?.with_weights(w.to_vec())
        }
    }
}

fn simulated_observations(model: &dyn StateSpaceModel, ens: &Ensemble, rng: &RandomSource) -> Result<Array2<f64>> {
    sample_observation_ensemble(model, ens, &rng.fork_named("observe"))
}

/// One propagation + conditioning step on the observation `y`.
pub fn filter_step(
    method: &MethodConfig,
    mut state: FilterState,
    y: &[f64],
    model: &dyn StateSpaceModel,
    rng: &RandomSource,
) -> Result<(FilterState, StepDiagnostics)> {
    if y.len() != model.obs_dim() {
        return Err(FilterError::DimensionMismatch {
            context: "filter step observation",
            expected: model.obs_dim(),
            actual: y.len(),
        });
    }
    let step = state.step + 1;
    let started = Instant::now();
    let prior = propagate(model, &state.ensemble, &rng.fork_named("propagate"))?;
    let mut diag = StepDiagnostics {
        step,
        ..StepDiagnostics::default()
    };
    let conditioning = Instant::now();

    let posterior = match method {
        MethodConfig::Enkf(cfg) => {
            let obs = simulated_observations(model, &prior, rng)?;
            enkf_analysis(&prior, &obs, y, cfg.resolve(model)?)?
        }
        MethodConfig::Sir(cfg) => {
            let weights = sir_weights(model, &prior, y, step)?;
            let ess = effective_sample_size(&weights);
            diag.ess = Some(ess);
            let resample = cfg.ess_threshold.is_none_or(|t| ess < t * prior.len() as f64);
            diag.resampled = resample;
            if resample {
                multinomial_resample(&prior, &weights, &rng.fork_named("resample"))?
            } else {
                Ensemble::new(prior.into_particles())?.with_weights(weights)?
            }
        }
        MethodConfig::Otpf(cfg) => {
            let obs = simulated_observations(model, &prior, rng)?;
            let ot = state
                .ot
                .as_mut()
                .ok_or_else(|| FilterError::InvalidConfig("OTPF state built for another method".into()))?;
            if cfg.enkf_block {
                let gamma = EnKFConfig {
                    regularization: cfg.enkf_regularization,
                }
                .resolve(model)?;
                ot.map.enkf = Some(EnKFBlock::estimate(prior.particles(), &obs, gamma)?.freeze());
            }
            let train = TrainConfig {
                outer_iters: cfg.train.outer_for_step(step),
                ..cfg.train.clone()
            };
            diag.trace = ot.fit(prior.particles(), &obs, &train, &rng.fork_named("train"))?;
            let paired = cfg.enkf_block.then_some(&obs);
            Ensemble::new(apply_map(&ot.map, prior.particles(), y, paired)?)?
        }
    };

    diag.conditioning_seconds = conditioning.elapsed().as_secs_f64();
    diag.step_seconds = started.elapsed().as_secs_f64();
    state.ensemble = posterior;
    state.step = step;
    Ok((state, diag))
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub step: usize,
    pub message: String,
    /// The step failed because every importance weight vanished.
    pub degenerate_weights: bool,
}

/// The recorded output of [`run_filter`].
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub method: String,
    /// Index 0 is the initial ensemble, index `t` the posterior after step `t`.
    pub ensembles: Vec<Ensemble>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub failure: Option<RunFailure>,
}

impl FilterRun {
    pub fn steps_completed(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn total_seconds(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.step_seconds).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep at most this many particles of each recorded ensemble.
    pub record_cap: Option<usize>,
    /// Start from this ensemble instead of sampling the particle prior.
    pub initial: Option<Ensemble>,
}

fn thinned(ens: &Ensemble, cap: Option<usize>) -> Result<Ensemble> {
    let Some(cap) = cap.filter(|&c| c < ens.len()) else {
        return Ok(ens.clone());
    };
    let particles = ens.particles().slice(ndarray::s![..cap, ..]).to_owned();
    let out = Ensemble::new(particles)?;
    match ens.weights() {
        None => Ok(out),
        Some(w) => {
            let head = &w[..cap];
            let total: f64 = head.iter().sum();
            if total > 0.0 {
                out.with_weights(head.iter().map(|v| v / total).collect())
            } else {
                Ok(out)
            }
        }
    }
}

/// Filters the whole observation record of `trajectory` with `n_particles`
/// particles. A failing step ends the run and is recorded in
/// [`FilterRun::failure`].
pub fn run_filter(
    method: &MethodConfig,
    model: &dyn StateSpaceModel,
    trajectory: &Trajectory,
    n_particles: usize,
    rng: &RandomSource,
    options: &RunOptions,
) -> Result<FilterRun> {
    if trajectory.obs_dim() != model.obs_dim() {
        return Err(FilterError::DimensionMismatch {
            context: "trajectory observation width",
            expected: model.obs_dim(),
            actual: trajectory.obs_dim(),
        });
    }
    let initial = match &options.initial {
        Some(e) => e.clone(),
        None => sample_prior_ensemble(model, n_particles, &rng.fork_named("initial particles"))?,
    };
    let mut state = FilterState::new(method, model, initial, rng)?;
    let mut run = FilterRun {
        method: method.name().to_string(),
        ensembles: vec![thinned(&state.ensemble, options.record_cap)?],
        diagnostics: Vec::with_capacity(trajectory.len()),
        failure: None,
    };
    let steps = rng.fork_named("steps");
    for t in 0..trajectory.len() {
        let y = trajectory.observations.row(t).to_vec();
        match filter_step(method, state, &y, model, &steps.fork(t as u64 + 1)) {
            Ok((next, diag)) => {
                run.ensembles.push(thinned(&next.ensemble, options.record_cap)?);
                run.diagnostics.push(diag);
                state = next;
            }
            Err(e) => {
                run.failure = Some(RunFailure {
                    step: t + 1,
                    message: e.to_string(),
                    degenerate_weights: matches!(e, FilterError::DegenerateWeights { .. }),
                });
                break;
            }
        }
    }
    Ok(run)
}
