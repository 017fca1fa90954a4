use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{FilterError, Result};
use crate::filters::MethodConfig;
use crate::metrics::Metric;
use crate::models::ModelSpec;
use crate::oracle::REFERENCE_PARTICLES;

pub const SCHEMA_VERSION: u32 = 1;

/// Default cap on the number of values written to `particles.csv`.
pub const DEFAULT_PARTICLE_LIMIT: usize = 10_000_000;

const FIELDS: [&str; 12] = [
    "schema_version",
    "experiment",
    "model",
    "methods",
    "particles",
    "steps",
    "seeds",
    "metrics",
    "reference",
    "out_dir",
    "observation",
    "particle_limit",
];

/// What accuracy metrics are measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    None,
    /// Quadrature on a grid (static models of dimension 1 or 2).
    Grid,
    /// The closed-form Kalman filter (linear-Gaussian models).
    Kalman,
    /// A large-ensemble SIR run on the same observations.
    Sir { particles: usize },
}

impl ReferenceSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceSpec::None => "none",
            ReferenceSpec::Grid => "grid",
            ReferenceSpec::Kalman => "kalman",
            ReferenceSpec::Sir { .. } => "sir",
        }
    }

    fn default_for(model: &ModelSpec) -> Self {
        match model {
            ModelSpec::StaticSquare(m) if m.dim <= 2 => ReferenceSpec::Grid,
            ModelSpec::StaticBimodal(m) if m.dim <= 2 => ReferenceSpec::Grid,
            ModelSpec::DynamicLinear(_) => ReferenceSpec::Kalman,
            ModelSpec::DynamicBimodal(_) | ModelSpec::DynamicCubic(_) => ReferenceSpec::Sir {
                particles: REFERENCE_PARTICLES,
            },
            _ => ReferenceSpec::None,
        }
    }
}

/// A validated experiment description with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub experiment: String,
    pub model: ModelSpec,
    pub methods: Vec<MethodConfig>,
    pub particles: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,
    pub reference: ReferenceSpec,
    pub out_dir: PathBuf,
    /// Fixed observation for static models; otherwise simulated.
    pub observation: Option<Vec<f64>>,
    pub particle_limit: usize,
}

fn typed<T: DeserializeOwned>(path: &str, value: &Value) -> Result<T> {
    serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let inner = e.path().to_string();
        let full = if inner == "." { path.to_string() } else { format!("{path}.{inner}") };
        FilterError::validation(full, e.into_inner().to_string())
    })
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| FilterError::validation(key, "missing required field"))
}

/// Recursively overlays `patch` on `base`; non-object values replace.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn parse_model(value: &Value) -> Result<ModelSpec> {
    let unknown = |id: &str| {
        FilterError::validation(
            "model",
            format!("unknown model `{id}`; expected one of {}", ModelSpec::IDS.join(", ")),
        )
    };
    match value {
        Value::String(id) => ModelSpec::default_for(id).ok_or_else(|| unknown(id)),
        Value::Object(obj) => {
            if let Some(k) = obj.keys().find(|k| *k != "id" && *k != "params") {
                return Err(FilterError::validation(format!("model.{k}"), "unknown field"));
            }
            let id: String = typed("model.id", required(obj, "id").map_err(|_| FilterError::validation("model.id", "missing"))?)?;
            let default = ModelSpec::default_for(&id).ok_or_else(|| unknown(&id))?;
            let mut merged = serde_json::to_value(&default)?;
            if let Some(params) = obj.get("params") {
                if !params.is_object() {
                    return Err(FilterError::validation("model.params", "expected an object"));
                }
                merge_json(&mut merged["params"], params);
            }
            typed("model", &merged)
        }
        _ => Err(FilterError::validation("model", "expected a model id or {\"id\", \"params\"}")),
    }
}

fn parse_method(path: &str, value: &Value, model_id: &str) -> Result<MethodConfig> {
    let unknown = |name: &str| {
        FilterError::validation(
            path,
            format!("unknown method `{name}`; expected one of {}", MethodConfig::NAMES.join(", ")),
        )
    };
    match value {
        Value::String(name) => MethodConfig::default_for(name, model_id).ok_or_else(|| unknown(name)),
        Value::Object(obj) => {
            let name: String = typed(&format!("{path}.method"), required(obj, "method")?)?;
            let default = MethodConfig::default_for(&name, model_id).ok_or_else(|| unknown(&name))?;
            let mut merged = serde_json::to_value(&default)?;
            merge_json(&mut merged, value);
            if let Value::Object(m) = &mut merged {
                m.remove("method");
            }
            // Deserialize the variant body directly so error paths survive.
            Ok(match default {
                MethodConfig::Enkf(_) => MethodConfig::Enkf(typed(path, &merged)?),
                MethodConfig::Sir(_) => MethodConfig::Sir(typed(path, &merged)?),
                MethodConfig::Otpf(_) => MethodConfig::Otpf(typed(path, &merged)?),
            })
        }
        _ => Err(FilterError::validation(path, "expected a method name or an object with a `method` key")),
    }
}

fn parse_reference(value: &Value) -> Result<ReferenceSpec> {
    match value {
        Value::String(s) => match s.as_str() {
            "none" => Ok(ReferenceSpec::None),
            "grid" => Ok(ReferenceSpec::Grid),
            "kalman" => Ok(ReferenceSpec::Kalman),
            "sir" | "sir_1e5" => Ok(ReferenceSpec::Sir {
                particles: REFERENCE_PARTICLES,
            }),
            other => Err(FilterError::validation(
                "reference",
                format!("unknown reference `{other}`; expected none, grid, kalman or sir_1e5"),
            )),
        },
        _ => typed("reference", value),
    }
}

/// Parses and validates a JSON experiment spec.
pub fn parse_experiment_spec(text: &str) -> Result<ExperimentSpec> {
    let value: Value = serde_json::from_str(text).map_err(|e| FilterError::validation("$", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| FilterError::validation("$", "expected a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(FilterError::validation(k.as_str(), "unknown field"));
    }

    let schema_version = match obj.get("schema_version") {
        None => SCHEMA_VERSION,
        Some(v) => typed("schema_version", v)?,
    };
    if schema_version != SCHEMA_VERSION {
        return Err(FilterError::validation(
            "schema_version",
            format!("unsupported version {schema_version}; this build reads {SCHEMA_VERSION}"),
        ));
    }

    let model = parse_model(required(obj, "model")?)?;
    let methods = match required(obj, "methods")? {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_method(&format!("methods[{i}]"), v, model.id()))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(FilterError::validation("methods", "expected an array")),
    };
    let experiment: String = match obj.get("experiment") {
        Some(v) => typed("experiment", v)?,
        None => model.id().to_string(),
    };
    let reference = match obj.get("reference") {
        Some(v) => parse_reference(v)?,
        None => ReferenceSpec::default_for(&model),
    };
    let metrics = match obj.get("metrics") {
        Some(v) => typed("metrics", v)?,
        None if reference == ReferenceSpec::None => vec![Metric::Mse, Metric::Ess],
        None => vec![Metric::Mmd2, Metric::Mse, Metric::Ess],
    };
    let out_dir = match obj.get("out_dir") {
        Some(v) => typed("out_dir", v)?,
        None => PathBuf::from("out").join(&experiment),
    };

    let spec = ExperimentSpec {
        schema_version,
        experiment,
        model,
        methods,
        particles: typed("particles", required(obj, "particles")?)?,
        steps: typed("steps", required(obj, "steps")?)?,
        seeds: typed("seeds", required(obj, "seeds")?)?,
        metrics,
        reference,
        out_dir,
        observation: obj.get("observation").map(|v| typed("observation", v)).transpose()?.flatten(),
        particle_limit: match obj.get("particle_limit") {
            Some(v) => typed("particle_limit", v)?,
            None => DEFAULT_PARTICLE_LIMIT,
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads and validates the spec at `path`.
pub fn load_experiment_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| FilterError::io(path, e))?;
    parse_experiment_spec(&text)
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let name_ok = !self.experiment.is_empty()
            && self
                .experiment
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !name_ok {
            return Err(FilterError::validation("experiment", "use letters, digits, `_`, `-` or `.`"));
        }
        self.model.validate().map_err(|e| FilterError::validation("model.params", e.to_string()))?;
        if self.particles == 0 {
            return Err(FilterError::validation("particles", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(FilterError::validation("steps", "must be at least 1"));
        }
        if self.model.is_static() && self.steps != 1 {
            return Err(FilterError::validation("steps", "static models take exactly one step"));
        }
        if self.seeds.is_empty() {
            return Err(FilterError::validation("seeds", "at least one seed is required"));
        }
        let mut names = Vec::new();
        for (i, m) in self.methods.iter().enumerate() {
            let path = format!("methods[{i}]");
            m.validate().map_err(|e| FilterError::validation(path.as_str(), e.to_string()))?;
            if names.contains(&m.name()) {
                return Err(FilterError::validation(path, format!("method `{}` listed twice", m.name())));
            }
            names.push(m.name());
            if let MethodConfig::Otpf(c) = m {
                if c.train.batch_size > self.particles {
                    return Err(FilterError::validation(
                        format!("{path}.train.batch_size"),
                        format!("exceeds particles ({})", self.particles),
                    ));
                }
            }
        }
        for (i, metric) in self.metrics.iter().enumerate() {
            match metric {
                Metric::WallSeconds => {
                    return Err(FilterError::validation(
                        format!("metrics[{i}]"),
                        "wall-clock time is recorded in timing.csv, not metrics.csv",
                    ))
                }
                Metric::Mmd2 if self.reference == ReferenceSpec::None => {
                    return Err(FilterError::validation(format!("metrics[{i}]"), "mmd2 needs a reference"))
                }
                _ => {}
            }
        }
        match (&self.reference, &self.model) {
            (ReferenceSpec::Grid, ModelSpec::StaticSquare(m)) if m.dim <= 2 => {}
            (ReferenceSpec::Grid, ModelSpec::StaticBimodal(m)) if m.dim <= 2 => {}
            (ReferenceSpec::Grid, _) => {
                return Err(FilterError::validation("reference", "grid needs a static model of dimension 1 or 2"))
            }
            (ReferenceSpec::Kalman, ModelSpec::DynamicLinear(_)) => {}
            (ReferenceSpec::Kalman, _) => return Err(FilterError::validation("reference", "kalman needs dynamic_linear")),
            (ReferenceSpec::Sir { particles: 0 }, _) => {
                return Err(FilterError::validation("reference.particles", "must be at least 1"))
            }
            _ => {}
        }
        if let Some(y) = &self.observation {
            if !self.model.is_static() {
                return Err(FilterError::validation("observation", "only static models take a fixed observation"));
            }
            let m = self.model.build()?.obs_dim();
            if y.len() != m {
                return Err(FilterError::validation("observation", format!("expected {m} values, got {}", y.len())));
            }
        }
        Ok(())
    }

    /// The manifest name of the run for `seed`.
    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-s{seed}", self.experiment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{EnKFConfig, OTPFConfig};

    fn parse(text: &str) -> Result<ExperimentSpec> {
        parse_experiment_spec(text)
    }

    fn path_of(err: FilterError) -> String {
        match err {
            FilterError::Validation { path, .. } => path,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn minimal_spec_gets_dynamic_defaults() {
        let s = parse(r#"{"model":"dynamic_bimodal","methods":["enkf","otpf"],"particles":1000,"steps":10,"seeds":[1]}"#)
            .unwrap();
        assert_eq!(s.methods[0], MethodConfig::Enkf(EnKFConfig::default()));
        let MethodConfig::Otpf(ot) = &s.methods[1] else { panic!() };
        assert_eq!(ot, &OTPFConfig::defaults_for("dynamic_bimodal"));
        assert_eq!((ot.train.lr_f, ot.train.lr_t, ot.train.batch_size), (1e-3, 2e-3, 64));
        assert_eq!((ot.train.outer_iters, ot.train.outer_floor), (1024, 64));
        assert!(ot.enkf_block);
        assert_eq!(s.reference, ReferenceSpec::Sir { particles: 100_000 });
        assert_eq!(s.experiment, "dynamic_bimodal");
        assert_eq!(s.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        let err = parse(r#"{"model":"dynamic_bimodal","methods":[],"particel_count":3,"particles":10,"steps":1,"seeds":[1]}"#)
            .unwrap_err();
        assert_eq!(path_of(err), "particel_count");
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let err = parse(r#"{"model":"dynamic_bimodal","methods":["enkf"],"particles":10,"steps":1,"seeds":[]}"#)
            .unwrap_err();
        assert_eq!(path_of(err), "seeds");
    }

    #[test]
    fn nested_errors_carry_their_path() {
        let base = r#""model":"lorenz63","particles":100,"steps":2,"seeds":[0]"#;
        let err = parse(&format!(r#"{{{base},"methods":[{{"method":"otpf","train":{{"lr_g":1}}}}]}}"#)).unwrap_err();
        let path = path_of(err);
        assert!(path.starts_with("methods[0].train"), "{path}");
        let err = parse(&format!(r#"{{{base},"methods":[{{"method":"otpf","train":{{"lr_f":"fast"}}}}]}}"#)).unwrap_err();
        assert_eq!(path_of(err), "methods[0].train.lr_f");
        let err = parse(r#"{"model":{"id":"lorenz96","params":{"forcing":"x"}},"methods":[],"particles":10,"steps":1,"seeds":[1]}"#)
            .unwrap_err();
        assert!(path_of(err).starts_with("model"));
        let err = parse(r#"{"model":"lorenz96","methods":[],"particles":-1,"steps":1,"seeds":[1]}"#).unwrap_err();
        assert_eq!(path_of(err), "particles");
        let err = parse(r#"{"model":"lorenz96","methods":[],"steps":1,"seeds":[1]}"#).unwrap_err();
        assert_eq!(path_of(err), "particles");
    }

    #[test]
    fn method_overrides_merge_onto_model_defaults() {
        let s = parse(
            r#"{"model":"lorenz96","methods":[{"method":"otpf","train":{"outer_iters":8}}],
                "particles":200,"steps":3,"seeds":[2]}"#,
        )
        .unwrap();
        let MethodConfig::Otpf(ot) = &s.methods[0] else { panic!() };
        assert_eq!(ot.train.outer_iters, 8);
        assert_eq!(ot.train.lr_t, 1e-1);
        assert_eq!(ot.train.batch_size, 128);
    }

    #[test]
    fn model_params_merge_and_reference_strings() {
        let s = parse(
            r#"{"model":{"id":"static_square","params":{"noise_std":0.04}},"methods":["sir"],
                "particles":250,"steps":1,"seeds":[0],"observation":[1,1],"reference":"grid"}"#,
        )
        .unwrap();
        assert_eq!(
            s.model,
            ModelSpec::StaticSquare(crate::models::StaticSquareModel {
                dim: 2,
                noise_std: 0.04
            })
        );
        let s = parse(r#"{"model":"dynamic_cubic","methods":[],"particles":10,"steps":1,"seeds":[1],"reference":{"kind":"sir","particles":500}}"#)
            .unwrap();
        assert_eq!(s.reference, ReferenceSpec::Sir { particles: 500 });
    }

    #[test]
    fn incompatible_choices_are_validation_errors() {
        let cases = [
            (r#"{"model":"lorenz63","methods":[],"particles":10,"steps":1,"seeds":[1],"reference":"grid"}"#, "reference"),
            (r#"{"model":"static_square","methods":[],"particles":10,"steps":3,"seeds":[1]}"#, "steps"),
            (r#"{"model":"lorenz63","methods":[],"particles":10,"steps":1,"seeds":[1],"metrics":["mmd2"]}"#, "metrics[0]"),
            (r#"{"model":"lorenz63","methods":["enkf","enkf"],"particles":10,"steps":1,"seeds":[1]}"#, "methods[1]"),
            (r#"{"model":"lorenz63","methods":["otpf"],"particles":10,"steps":1,"seeds":[1]}"#, "methods[0].train.batch_size"),
            (r#"{"model":"lorenz63","methods":["pf"],"particles":10,"steps":1,"seeds":[1]}"#, "methods[0]"),
            (r#"{"model":"static_square","methods":[],"particles":10,"steps":1,"seeds":[1],"observation":[1]}"#, "observation"),
            (r#"{"model":"lorenz63","methods":[],"particles":10,"steps":1,"seeds":[1],"schema_version":2}"#, "schema_version"),
            (r#"[1,2]"#, "$"),
        ];
        for (text, expected) in cases {
            assert_eq!(path_of(parse(text).unwrap_err()), expected, "{text}");
        }
    }

    #[test]
    fn resolved_spec_roundtrips_through_json() {
        let s = parse(r#"{"model":"lorenz63","methods":["enkf","sir","otpf"],"particles":100,"steps":5,"seeds":[3,4]}"#)
            .unwrap();
        let again = parse(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
    }
}
