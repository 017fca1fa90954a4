//! Benchmark state-space models.

mod lorenz;
pub mod ode;
mod polynomial;
mod static_examples;

use serde::{Deserialize, Serialize};

pub use lorenz::{Lorenz63Model, Lorenz96Model};
pub use ode::{lorenz63_rhs, lorenz96_rhs, rk4_step};
pub use polynomial::DynamicPolynomialModel;
pub use static_examples::{BimodalPriorModel, StaticSquareModel};

use crate::error::{FilterError, Result};
use crate::model::StateSpaceModel;
use crate::rng::{standard_normal, Stream};

/// `log N(y; mean, var·I)`.
pub fn gaussian_log_likelihood(y: &[f64], mean: &[f64], var: f64) -> Result<f64> {
    if y.len() != mean.len() {
        return Err(FilterError::DimensionMismatch {
            context: "log likelihood",
            expected: mean.len(),
            actual: y.len(),
        });
    }
    let sq: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let m = y.len() as f64;
    Ok(-sq / (2.0 * var) - 0.5 * m * (2.0 * std::f64::consts::PI * var).ln())
}

pub(crate) fn add_gaussian_noise(x: &mut [f64], std: f64, rng: &mut Stream) {
    for v in x {
        *v += std * standard_normal(rng);
    }
}

pub(crate) fn gaussian_vector(mean: &[f64], std: f64, rng: &mut Stream) -> Vec<f64> {
    mean.iter().map(|m| m + std * standard_normal(rng)).collect()
}

/// A serializable choice of benchmark model with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", content = "params", rename_all = "snake_case")]
pub enum ModelSpec {
    StaticSquare(StaticSquareModel),
    StaticBimodal(BimodalPriorModel),
    DynamicBimodal(DynamicPolynomialModel),
    DynamicLinear(DynamicPolynomialModel),
    DynamicCubic(DynamicPolynomialModel),
    Lorenz63(Lorenz63Model),
    Lorenz96(Lorenz96Model),
}

impl ModelSpec {
    pub const IDS: [&'static str; 7] = [
        "static_square",
        "static_bimodal",
        "dynamic_bimodal",
        "dynamic_linear",
        "dynamic_cubic",
        "lorenz63",
        "lorenz96",
    ];

    /// The model `id` with its default parameters.
    pub fn default_for(id: &str) -> Option<ModelSpec> {
        Some(match id {
            "static_square" => ModelSpec::StaticSquare(StaticSquareModel::default()),
            "static_bimodal" => ModelSpec::StaticBimodal(BimodalPriorModel::default()),
            "dynamic_bimodal" => ModelSpec::DynamicBimodal(DynamicPolynomialModel::with_exponent(2)),
            "dynamic_linear" => ModelSpec::DynamicLinear(DynamicPolynomialModel::with_exponent(1)),
            "dynamic_cubic" => ModelSpec::DynamicCubic(DynamicPolynomialModel::with_exponent(3)),
            "lorenz63" => ModelSpec::Lorenz63(Lorenz63Model::default()),
            "lorenz96" => ModelSpec::Lorenz96(Lorenz96Model::default()),
            _ => return None,
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::StaticSquare(_) => "static_square",
            ModelSpec::StaticBimodal(_) => "static_bimodal",
            ModelSpec::DynamicBimodal(_) => "dynamic_bimodal",
            ModelSpec::DynamicLinear(_) => "dynamic_linear",
            ModelSpec::DynamicCubic(_) => "dynamic_cubic",
            ModelSpec::Lorenz63(_) => "lorenz63",
            ModelSpec::Lorenz96(_) => "lorenz96",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::StaticSquare(m) => m.validate(),
            ModelSpec::StaticBimodal(m) => m.validate(),
            ModelSpec::DynamicBimodal(m) | ModelSpec::DynamicLinear(m) | ModelSpec::DynamicCubic(m) => m.validate(),
            ModelSpec::Lorenz63(m) => m.validate(),
            ModelSpec::Lorenz96(m) => m.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn StateSpaceModel>> {
        self.validate()?;
        Ok(match self {
            ModelSpec::StaticSquare(m) => Box::new(m.clone()),
            ModelSpec::StaticBimodal(m) => Box::new(m.clone()),
            ModelSpec::DynamicBimodal(m) | ModelSpec::DynamicLinear(m) | ModelSpec::DynamicCubic(m) => {
                Box::new(m.clone())
            }
            ModelSpec::Lorenz63(m) => Box::new(m.clone()),
            ModelSpec::Lorenz96(m) => Box::new(m.clone()),
        })
    }

    /// A copy of this model with state dimension `dim` (dimension sweeps).
    pub fn with_state_dim(&self, dim: usize) -> Result<ModelSpec> {
        let mut out = self.clone();
        match &mut out {
            ModelSpec::StaticSquare(m) => m.dim = dim,
            ModelSpec::StaticBimodal(m) => m.dim = dim,
            ModelSpec::DynamicBimodal(m) | ModelSpec::DynamicLinear(m) | ModelSpec::DynamicCubic(m) => m.dim = dim,
            ModelSpec::Lorenz63(_) => return Err(FilterError::InvalidConfig("lorenz63 has a fixed dimension".into())),
            ModelSpec::Lorenz96(_) => return Err(FilterError::InvalidConfig("lorenz96 has a fixed dimension".into())),
        }
        out.validate()?;
        Ok(out)
    }

    pub fn is_static(&self) -> bool {
        matches!(self, ModelSpec::StaticSquare(_) | ModelSpec::StaticBimodal(_))
    }
}
