use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::files::{csv_buffer, csv_err, finish_csv, sha256_hex, write_atomic, write_entry, FileEntry};
use super::run::{execute_experiment, RunManifest, SoftwareInfo};
use super::spec::{ExperimentSpec, SCHEMA_VERSION};
use crate::error::{FilterError, Result};
use crate::filters::MethodConfig;
use crate::metrics::{format_float, Metric, MetricSeries};

/// The quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// State dimension of the model.
    Dimension,
    Particles,
    /// Outer training iterations of the transport filter.
    TrainBudget,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::Dimension, SweepAxis::Particles, SweepAxis::TrainBudget];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Dimension => "dimension",
            SweepAxis::Particles => "particles",
            SweepAxis::TrainBudget => "train_budget",
        }
    }

    /// `spec` with this axis set to `value`, writing into its own subdirectory.
    pub fn apply(self, spec: &ExperimentSpec, value: usize) -> Result<ExperimentSpec> {
        let mut cell = spec.clone();
        match self {
            SweepAxis::Dimension => {
                cell.model = spec
                    .model
                    .with_state_dim(value)
                    .map_err(|e| FilterError::validation("axis", e.to_string()))?;
            }
            SweepAxis::Particles => cell.particles = value,
            SweepAxis::TrainBudget => {
                let mut any = false;
                for m in &mut cell.methods {
                    if let MethodConfig::Otpf(c) = m {
                        c.train.outer_iters = value;
                        any = true;
                    }
                }
                if !any {
                    return Err(FilterError::validation("axis", "train_budget needs an otpf method"));
                }
            }
        }
        cell.experiment = format!("{}-{}-{value}", spec.experiment, self.as_str());
        cell.out_dir = spec.out_dir.join(format!("{}={value}", self.as_str()));
        cell.validate()?;
        Ok(cell)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| FilterError::validation("axis", format!("unknown axis `{s}`")))
    }
}

/// One line of `sweep.csv`: a time-averaged metric summarized over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub method: String,
    pub metric: Metric,
    pub mean: f64,
    pub stderr: f64,
    /// Mean wall-clock seconds of one run of `method` at this value.
    pub wall_seconds: f64,
}

impl SweepRow {
    pub const HEADER: [&'static str; 7] = ["axis", "value", "method", "metric", "mean", "stderr", "wall_seconds"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: usize,
    /// Cell directory relative to the sweep directory.
    pub dir: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub software: SoftwareInfo,
    pub experiment: String,
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub cells: Vec<SweepCell>,
    pub files: Vec<FileEntry>,
}

impl SweepManifest {
    pub const FILE_NAME: &'static str = "sweep_manifest.json";
}

/// Per-run time averages of each `(method, metric)` pair, keyed by run id.
pub fn time_averages(series: &MetricSeries) -> BTreeMap<(String, Metric), BTreeMap<String, f64>> {
    let mut sums: BTreeMap<(String, Metric), BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in &series.rows {
        let e = sums
            .entry((r.method.clone(), r.metric))
            .or_default()
            .entry(r.run_id.clone())
            .or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(k, runs)| (k, runs.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect()))
        .collect()
}

/// Sample mean and standard error; the error is zero for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn summarize(axis: SweepAxis, value: usize, manifest: &RunManifest, series: &MetricSeries) -> Vec<SweepRow> {
    time_averages(series)
        .into_iter()
        .map(|((method, metric), runs)| {
            let per_seed: Vec<f64> = runs.into_values().collect();
            let (mean, stderr) = mean_stderr(&per_seed);
            let secs: Vec<f64> = manifest
                .runs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.total_seconds)
                .collect();
            SweepRow {
                axis,
                value,
                method,
                metric,
                mean,
                stderr,
                wall_seconds: mean_stderr(&secs).0,
            }
        })
        .collect()
}

/// Runs `spec` once per value of `axis` and writes `sweep.csv` next to the
/// per-value output directories.
pub fn run_sweep(spec: &ExperimentSpec, axis: SweepAxis, values: &[usize]) -> Result<(SweepManifest, Vec<SweepRow>)> {
    if values.is_empty() {
        return Err(FilterError::validation("values", "at least one value is required"));
    }
    let cells = values
        .iter()
        .map(|&v| axis.apply(spec, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (cell, &value) in cells.iter().zip(values) {
        let out = execute_experiment(cell)?;
        rows.extend(summarize(axis, value, &out.manifest, &out.metrics));
        let bytes = std::fs::read(cell.out_dir.join(RunManifest::FILE_NAME))
            .map_err(|e| FilterError::io(cell.out_dir.join(RunManifest::FILE_NAME), e))?;
        records.push(SweepCell {
            value,
            dir: format!("{}={value}", axis.as_str()),
            manifest_sha256: sha256_hex(&bytes),
        });
    }

    let mut w = csv_buffer();
    w.write_record(SweepRow::HEADER).map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.axis.as_str().to_string(),
            r.value.to_string(),
            r.method.clone(),
            r.metric.to_string(),
            format_float(r.mean),
            format_float(r.stderr),
            format_float(r.wall_seconds),
        ])
        .map_err(csv_err)?;
    }
    let files = vec![write_entry(&spec.out_dir, "sweep.csv", &finish_csv(w)?)?];
    let manifest = SweepManifest {
        schema_version: SCHEMA_VERSION,
        software: SoftwareInfo::current(),
        experiment: spec.experiment.clone(),
        axis,
        values: values.to_vec(),
        cells: records,
        files,
    };
    write_atomic(&spec.out_dir.join(SweepManifest::FILE_NAME), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok((manifest, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::spec::parse_experiment_spec;

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn axes_parse_and_apply() {
        let spec = parse_experiment_spec(
            r#"{"model":"dynamic_linear","particles":100,"steps":2,"seeds":[0],
                "methods":["enkf",{"method":"otpf","train":{"batch_size":32}}],"out_dir":"o"}"#,
        )
        .unwrap();
        assert_eq!("train_budget".parse::<SweepAxis>().unwrap(), SweepAxis::TrainBudget);
        assert!("budget".parse::<SweepAxis>().is_err());
        let cell = SweepAxis::TrainBudget.apply(&spec, 7).unwrap();
        let MethodConfig::Otpf(c) = &cell.methods[1] else { panic!() };
        assert_eq!(c.train.outer_iters, 7);
        assert_eq!(cell.out_dir, std::path::Path::new("o/train_budget=7"));
        assert_eq!(SweepAxis::Dimension.apply(&spec, 5).unwrap().model.build().unwrap().state_dim(), 5);
        assert!(matches!(
            SweepAxis::Particles.apply(&spec, 16),
            Err(FilterError::Validation { path, .. }) if path == "methods[1].train.batch_size"
        ));
    }

    #[test]
    fn sweep_writes_one_row_per_cell_method_and_metric() {
        let dir = tempfile::tempdir().unwrap();
        let out = serde_json::to_string(dir.path()).unwrap();
        let spec = parse_experiment_spec(&format!(
            r#"{{"model":"dynamic_linear","particles":30,"steps":3,"seeds":[0,1,2],
                "methods":["enkf","sir"],"metrics":["mse","ess"],"reference":"none","out_dir":{out}}}"#
        ))
        .unwrap();
        let (manifest, rows) = run_sweep(&spec, SweepAxis::Particles, &[20, 40]).unwrap();
        // enkf: mse; sir: mse + ess
        assert_eq!(rows.len(), 2 * 3);
        assert_eq!(manifest.cells.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "axis,value,method,metric,mean,stderr,wall_seconds");
        assert_eq!(text.lines().count(), 7);
        assert!(dir.path().join("particles=40").join(RunManifest::FILE_NAME).exists());
        assert!(rows.iter().all(|r| r.stderr >= 0.0 && r.mean.is_finite()));
    }
}
