use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::files::{csv_buffer, csv_err, finish_csv, sha256_hex, write_entry, FileEntry};
use super::spec::{ExperimentSpec, ReferenceSpec, SCHEMA_VERSION};
use crate::ensemble::{Ensemble, Trajectory};
use crate::error::{FilterError, Result};
use crate::filters::{run_filter, FilterRun, RunFailure, RunOptions};
use crate::linalg::cholesky;
use crate::metrics::{
    ensemble_mode_balance, equally_weighted, format_float, median_bandwidth, subsample_rows, Metric, MetricSeries,
    MmdConfig, MmdReference, MEDIAN_CAP, MMD_CAP,
};
use crate::model::{simulate_truth, StateSpaceModel};
use crate::models::ModelSpec;
use crate::oracle::{
    grid_bayes_update, grid_sample, kalman_filter, reference_sir_posterior, GridPosterior, GridSpec,
    LinearGaussianDynamics,
};
use crate::rng::{fill_standard_normal, RandomSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftwareInfo {
    pub name: String,
    pub version: String,
}

impl SoftwareInfo {
    pub fn current() -> Self {
        SoftwareInfo {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Timing and outcome of one `(method, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    /// Checksum of the truth trajectory this run filtered.
    pub truth_sha256: String,
    pub steps_completed: usize,
    pub total_seconds: f64,
    pub conditioning_seconds: f64,
    pub step_seconds: Vec<f64>,
    pub failure: Option<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub run_id: String,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub run_id: String,
    pub kind: String,
    pub seconds: f64,
    /// Kernel bandwidth shared by every MMD evaluation of this run.
    pub bandwidth: f64,
    pub bandwidth_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleDump {
    pub written: bool,
    pub values: usize,
    pub limit: usize,
}

/// Everything needed to audit and re-execute an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub software: SoftwareInfo,
    pub experiment: String,
    pub spec: ExperimentSpec,
    pub seeds: Vec<u64>,
    pub truths: Vec<TruthRecord>,
    pub references: Vec<ReferenceRecord>,
    pub runs: Vec<RunRecord>,
    pub particles_csv: ParticleDump,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FilterError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.failure.is_some())
    }
}

/// The manifest together with the metric rows it wrote.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub manifest: RunManifest,
    pub metrics: MetricSeries,
}

struct Reference {
    sets: Vec<MmdReference>,
    record: ReferenceRecord,
    grid: Option<GridPosterior>,
}

fn truth_for(spec: &ExperimentSpec, model: &dyn StateSpaceModel, rng: &RandomSource) -> Result<Trajectory> {
    let mut truth = simulate_truth(model, spec.steps, rng)?;
    if let Some(y) = &spec.observation {
        truth.observations.row_mut(0).assign(&Array1::from(y.clone()));
    }
    Ok(truth)
}

fn truth_csv(truth: &Trajectory, run_id: &str, w: &mut csv::Writer<Vec<u8>>) -> Result<()> {
    let mut first = vec![run_id.to_string(), "0".into()];
    first.extend(truth.initial_state.iter().map(|v| format_float(*v)));
    first.extend(std::iter::repeat_n(String::new(), truth.obs_dim()));
    w.write_record(&first).map_err(csv_err)?;
    for t in 0..truth.len() {
        let mut row = vec![run_id.to_string(), truth.times[t].to_string()];
        row.extend(truth.states.row(t).iter().map(|v| format_float(*v)));
        row.extend(truth.observations.row(t).iter().map(|v| format_float(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    Ok(())
}

fn truth_checksum(truth: &Trajectory, run_id: &str) -> Result<String> {
    let mut w = csv_buffer();
    truth_csv(truth, run_id, &mut w)?;
    Ok(sha256_hex(&finish_csv(w)?))
}

fn gaussian_samples(mean: &Array1<f64>, cov: &Array2<f64>, count: usize, rng: &RandomSource) -> Result<Array2<f64>> {
    let l = cholesky(cov.view(), "Kalman posterior covariance")?;
    let mut z = Array2::zeros((count, mean.len()));
    fill_standard_normal(&mut rng.stream(), z.as_slice_mut().expect("standard layout"));
    Ok(z.dot(&l.t()) + mean)
}

fn grid_reference(model_spec: &ModelSpec, model: &dyn StateSpaceModel, y: &[f64]) -> Result<GridPosterior> {
    match model_spec {
        ModelSpec::StaticSquare(m) => {
            let spec = GridSpec::for_prior(&vec![0.0; m.dim], &vec![1.0; m.dim])?;
            let prior = |x: &[f64]| x.iter().map(|v| (-0.5 * v * v).exp()).product::<f64>();
            grid_bayes_update(&prior, model, y, &spec)
        }
        ModelSpec::StaticBimodal(m) => {
            let spread = (m.mode_offset * m.mode_offset + m.mode_std * m.mode_std).sqrt();
            let spec = GridSpec::for_prior(&vec![0.0; m.dim], &vec![spread; m.dim])?;
            let prior = |x: &[f64]| m.prior_density(x);
            grid_bayes_update(&prior, model, y, &spec)
        }
        _ => Err(FilterError::InvalidConfig("grid reference needs a static model".into())),
    }
}

fn kalman_reference(model_spec: &ModelSpec, truth: &Trajectory, rng: &RandomSource) -> Result<Vec<Array2<f64>>> {
    let ModelSpec::DynamicLinear(m) = model_spec else {
        return Err(FilterError::InvalidConfig("kalman reference needs dynamic_linear".into()));
    };
    let n = m.dim;
    let eye = Array2::<f64>::eye(n);
    let dynamics = LinearGaussianDynamics {
        a: &eye * (1.0 - m.alpha),
        q: &eye * (4.0 * m.lambda * m.lambda),
        h: eye.clone(),
        noise_cov: &eye * (m.lambda * m.lambda),
        initial_mean: Array1::zeros(n),
        initial_cov: eye.clone(),
    };
    kalman_filter(&dynamics, &truth.observations)?
        .iter()
        .enumerate()
        .map(|(t, (mean, cov))| gaussian_samples(mean, cov, MMD_CAP, &rng.fork(t as u64 + 1)))
        .collect()
}

fn build_reference(
    spec: &ExperimentSpec,
    model: &dyn StateSpaceModel,
    truth: &Trajectory,
    run_id: &str,
    rng: &RandomSource,
) -> Result<Option<Reference>> {
    let started = Instant::now();
    let mut grid = None;
    let sets: Vec<Array2<f64>> = match &spec.reference {
        ReferenceSpec::None => return Ok(None),
        ReferenceSpec::Grid => {
            let gp = grid_reference(&spec.model, model, &truth.observations.row(0).to_vec())?;
            let samples = grid_sample(&gp, MMD_CAP, rng)?;
            grid = Some(gp);
            vec![samples]
        }
        ReferenceSpec::Kalman => kalman_reference(&spec.model, truth, rng)?,
        ReferenceSpec::Sir { particles } => reference_sir_posterior(model, truth, *particles, rng, Some(MMD_CAP))?,
    };
    let per_set = MEDIAN_CAP.div_ceil(sets.len()).max(1);
    let pooled: Vec<Array2<f64>> = sets.iter().map(|s| subsample_rows(s.view(), per_set)).collect();
    let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
    let pooled = concatenate(Axis(0), &views).expect("same state width");
    let bw = median_bandwidth(pooled.view())?;
    let cfg = MmdConfig::new(bw.bandwidth)?;
    let sets = sets
        .into_iter()
        .map(|s| MmdReference::new(subsample_rows(s.view(), MMD_CAP), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Reference {
        sets,
        record: ReferenceRecord {
            run_id: run_id.to_string(),
            kind: spec.reference.name().to_string(),
            seconds: started.elapsed().as_secs_f64(),
            bandwidth: bw.bandwidth,
            bandwidth_degenerate: bw.degenerate,
        },
        grid,
    }))
}

fn metric_value(
    metric: Metric,
    ens: &Ensemble,
    t: usize,
    run: &FilterRun,
    truth: &Trajectory,
    reference: Option<&Reference>,
    rng: &RandomSource,
) -> Result<Option<f64>> {
    Ok(match metric {
        Metric::Mmd2 => {
            let Some(r) = reference else { return Ok(None) };
            let samples = equally_weighted(ens, &rng.fork(t as u64))?;
            Some(r.sets[t - 1].mmd_squared(subsample_rows(samples.view(), MMD_CAP).view())?)
        }
        Metric::Mse => {
            let err = ens.mean() - truth.states.row(t - 1);
            Some(err.dot(&err))
        }
        Metric::Ess => run.diagnostics[t - 1].ess,
        Metric::ModeBalance => Some(ensemble_mode_balance(ens, 0)?),
        Metric::WallSeconds => None,
    })
}

/// Metric rows of one filter run; a non-finite value ends the series and is
/// reported as a failure.
fn record_metrics(
    spec: &ExperimentSpec,
    run: &FilterRun,
    truth: &Trajectory,
    reference: Option<&Reference>,
    run_id: &str,
    rng: &RandomSource,
    out: &mut MetricSeries,
) -> Result<Option<RunFailure>> {
    for t in 1..=run.steps_completed() {
        let ens = &run.ensembles[t];
        for &metric in &spec.metrics {
            let Some(v) = metric_value(metric, ens, t, run, truth, reference, &rng.fork_named(metric.as_str()))? else {
                continue;
            };
            if !v.is_finite() {
                return Ok(Some(RunFailure {
                    step: t,
                    message: format!("{metric} is not finite"),
                    degenerate_weights: false,
                }));
            }
            out.push(t, &run.method, metric, v, run_id)?;
        }
    }
    Ok(None)
}

fn particle_rows(run: &FilterRun, run_id: &str, w: &mut csv::Writer<Vec<u8>>) -> Result<()> {
    for (t, ens) in run.ensembles.iter().enumerate() {
        let uniform = 1.0 / ens.len() as f64;
        for (i, row) in ens.particles().rows().into_iter().enumerate() {
            let weight = ens.weights().map_or(uniform, |w| w[i]);
            let mut rec = vec![
                run_id.to_string(),
                run.method.clone(),
                t.to_string(),
                i.to_string(),
                format_float(weight),
            ];
            rec.extend(row.iter().map(|v| format_float(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    Ok(())
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

/// Runs every `(seed, method)` cell of `spec`, writes the output files into
/// `spec.out_dir` and returns the manifest with the metric rows.
pub fn execute_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let model = spec.model.build()?;
    let (n, m) = (model.state_dim(), model.obs_dim());
    let out_dir = spec.out_dir.as_path();

    let dump_values = spec.seeds.len() * spec.methods.len() * (spec.steps + 1) * spec.particles * n;
    let write_particles = dump_values <= spec.particle_limit;

    let mut metrics = MetricSeries::default();
    let mut truth_w = csv_buffer();
    let mut header = vec!["run_id".to_string(), "time_index".to_string()];
    header.extend(numbered("x", n));
    header.extend(numbered("y", m));
    truth_w.write_record(&header).map_err(csv_err)?;
    let mut timing_w = csv_buffer();
    timing_w
        .write_record(["run_id", "method", "time_index", "conditioning_seconds", "step_seconds"])
        .map_err(csv_err)?;
    let mut trace_w = csv_buffer();
    trace_w
        .write_record(["run_id", "method", "time_index", "outer_iter", "objective", "map_part", "potential_part"])
        .map_err(csv_err)?;
    let mut particles_w = csv_buffer();
    let mut header: Vec<String> = ["run_id", "method", "time_index", "particle", "weight"].map(String::from).into();
    header.extend(numbered("x", n));
    particles_w.write_record(&header).map_err(csv_err)?;

    let mut files = Vec::new();
    let mut truths = Vec::new();
    let mut references = Vec::new();
    let mut runs = Vec::new();
    let has_trace = spec.methods.iter().any(|m| m.name() == "otpf");

    for &seed in &spec.seeds {
        let root = RandomSource::new(seed);
        let run_id = spec.run_id(seed);
        let truth = truth_for(spec, model.as_ref(), &root.fork_named("truth"))?;
        truth_csv(&truth, &run_id, &mut truth_w)?;
        let truth_sha = truth_checksum(&truth, &run_id)?;
        truths.push(TruthRecord {
            run_id: run_id.clone(),
            seed,
            sha256: truth_sha.clone(),
        });

        let reference = build_reference(spec, model.as_ref(), &truth, &run_id, &root.fork_named("reference"))?;
        if let Some(r) = &reference {
            references.push(r.record.clone());
            if let Some(gp) = &r.grid {
                let mut buf = Vec::new();
                gp.write_csv(&mut buf)?;
                files.push(write_entry(out_dir, &format!("grid-{run_id}.csv"), &buf)?);
            }
        }

        for method in &spec.methods {
            let started = Instant::now();
            let result = run_filter(
                method,
                model.as_ref(),
                &truth,
                spec.particles,
                &root.fork_named("filter"),
                &RunOptions::default(),
            );
            let mut record = RunRecord {
                run_id: run_id.clone(),
                seed,
                method: method.name().to_string(),
                truth_sha256: truth_sha.clone(),
                steps_completed: 0,
                total_seconds: 0.0,
                conditioning_seconds: 0.0,
                step_seconds: Vec::new(),
                failure: None,
            };
            let run = match result {
                Ok(run) => run,
                Err(e) => {
                    record.total_seconds = started.elapsed().as_secs_f64();
                    record.failure = Some(RunFailure {
                        step: 0,
                        message: e.to_string(),
                        degenerate_weights: false,
                    });
                    runs.push(record);
                    continue;
                }
            };
            record.steps_completed = run.steps_completed();
            record.total_seconds = run.total_seconds();
            record.conditioning_seconds = run.diagnostics.iter().map(|d| d.conditioning_seconds).sum();
            record.step_seconds = run.diagnostics.iter().map(|d| d.step_seconds).collect();
            record.failure = run.failure.clone();

            let metric_rng = root.fork_named("metrics").fork_named(method.name());
            let metric_failure =
                record_metrics(spec, &run, &truth, reference.as_ref(), &run_id, &metric_rng, &mut metrics)?;
            if record.failure.is_none() {
                record.failure = metric_failure;
            }

            for d in &run.diagnostics {
                timing_w
                    .write_record([
                        run_id.as_str(),
                        method.name(),
                        &d.step.to_string(),
                        &format_float(d.conditioning_seconds),
                        &format_float(d.step_seconds),
                    ])
                    .map_err(csv_err)?;
                for row in &d.trace {
                    trace_w
                        .write_record([
                            run_id.as_str(),
                            method.name(),
                            &d.step.to_string(),
                            &row.outer_iter.to_string(),
                            &format_float(row.objective),
                            &format_float(row.map_part),
                            &format_float(row.potential_part),
                        ])
                        .map_err(csv_err)?;
                }
            }
            if write_particles {
                particle_rows(&run, &run_id, &mut particles_w)?;
            }
            runs.push(record);
        }
    }

    let mut buf = Vec::new();
    metrics.write_csv(&mut buf)?;
    files.push(write_entry(out_dir, "metrics.csv", &buf)?);
    files.push(write_entry(out_dir, "truth.csv", &finish_csv(truth_w)?)?);
    files.push(write_entry(out_dir, "timing.csv", &finish_csv(timing_w)?)?);
    if has_trace {
        files.push(write_entry(out_dir, "trace.csv", &finish_csv(trace_w)?)?);
    }
    if write_particles && !spec.methods.is_empty() {
        files.push(write_entry(out_dir, "particles.csv", &finish_csv(particles_w)?)?);
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        software: SoftwareInfo::current(),
        experiment: spec.experiment.clone(),
        spec: spec.clone(),
        seeds: spec.seeds.clone(),
        truths,
        references,
        runs,
        particles_csv: ParticleDump {
            written: write_particles && !spec.methods.is_empty(),
            values: dump_values,
            limit: spec.particle_limit,
        },
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    super::files::write_atomic(&out_dir.join(RunManifest::FILE_NAME), &json)?;
    Ok(ExperimentOutput { manifest, metrics })
}

/// [`execute_experiment`] without the in-memory metric rows.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunManifest> {
    Ok(execute_experiment(spec)?.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::files::verify_inventory;
    use crate::harness::spec::parse_experiment_spec;

    fn spec_in(dir: &Path, body: &str) -> ExperimentSpec {
        let out = serde_json::to_string(dir).unwrap();
        parse_experiment_spec(&format!(r#"{{{body},"out_dir":{out}}}"#)).unwrap()
    }

    #[test]
    fn dynamic_run_writes_paired_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(
            dir.path(),
            r#""model":"dynamic_bimodal","particles":64,"steps":4,"seeds":[5],
               "reference":{"kind":"sir","particles":2000},
               "methods":["enkf","sir",{"method":"otpf","train":{"outer_iters":4,"batch_size":16}}]"#,
        );
        let out = execute_experiment(&spec).unwrap();
        for method in ["enkf", "sir", "otpf"] {
            assert_eq!(out.metrics.values(method, Metric::Mmd2).len(), 4, "{method}");
            assert_eq!(out.metrics.values(method, Metric::Mse).len(), 4, "{method}");
        }
        assert_eq!(out.metrics.values("sir", Metric::Ess).len(), 4);
        assert!(out.metrics.values("enkf", Metric::Ess).is_empty());
        let shas: Vec<&str> = out.manifest.runs.iter().map(|r| r.truth_sha256.as_str()).collect();
        assert!(shas.iter().all(|s| *s == out.manifest.truths[0].sha256));
        assert!(verify_inventory(dir.path(), &out.manifest.files).unwrap().is_empty());
        let names: Vec<&str> = out.manifest.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["metrics.csv", "particles.csv", "timing.csv", "trace.csv", "truth.csv"]);
        let loaded = RunManifest::load(&dir.path().join(RunManifest::FILE_NAME)).unwrap();
        assert_eq!(loaded, out.manifest);
    }

    #[test]
    fn no_methods_leaves_the_truth_only() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path(), r#""model":"lorenz63","methods":[],"particles":10,"steps":3,"seeds":[1,2]"#);
        let manifest = run_experiment(&spec).unwrap();
        assert!(manifest.runs.is_empty());
        assert_eq!(manifest.truths.len(), 2);
        let truth = std::fs::read_to_string(dir.path().join("truth.csv")).unwrap();
        assert_eq!(truth.lines().next().unwrap(), "run_id,time_index,x0,x1,x2,y0,y1");
        assert_eq!(truth.lines().count(), 1 + 2 * 4);
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics, "time_index,method,metric,value,run_id\n");
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(
            dir.path(),
            r#""model":"static_square","observation":[1e200,1e200],
               "particles":20,"steps":1,"seeds":[0],"methods":["sir","enkf"],"metrics":["mse"],
               "reference":"none""#,
        );
        let manifest = run_experiment(&spec).unwrap();
        let sir = &manifest.runs[0];
        assert!(sir.failure.as_ref().is_some_and(|f| f.degenerate_weights), "{sir:?}");
        assert_eq!(manifest.runs[1].method, "enkf");
    }

    #[test]
    fn particle_dump_respects_the_limit() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(
            dir.path(),
            r#""model":"dynamic_linear","particles":50,"steps":2,"seeds":[1],"methods":["enkf"],"particle_limit":10"#,
        );
        let manifest = run_experiment(&spec).unwrap();
        assert!(!manifest.particles_csv.written);
        assert!(!dir.path().join("particles.csv").exists());
        assert_eq!(manifest.references[0].kind, "kalman");
    }

    #[test]
    fn static_grid_reference_writes_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(
            dir.path(),
            r#""model":"static_square","observation":[1,1],"particles":100,"steps":1,"seeds":[3],
               "methods":["sir"],"metrics":["mmd2","mode_balance"]"#,
        );
        let out = execute_experiment(&spec).unwrap();
        assert!(dir.path().join("grid-static_square-s3.csv").exists());
        let mb = out.metrics.values("sir", Metric::ModeBalance);
        assert!(mb.len() == 1 && (0.0..=1.0).contains(&mb[0]));
    }
}
