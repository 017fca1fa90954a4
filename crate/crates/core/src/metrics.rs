//! Sample-based accuracy measures: kernel MMD, state MSE and mode balance.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, Trajectory};
use crate::error::{FilterError, Result};

/// Smallest bandwidth the median heuristic returns.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;
/// Points used by the median heuristic.
pub const MEDIAN_CAP: usize = 1000;
/// Points per sample set in time-series MMD evaluation.
pub const MMD_CAP: usize = 2000;

/// `exp(−‖u − v‖² / (2h²))`.
pub fn rbf_kernel(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, bandwidth: f64) -> f64 {
    let sq: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthRule {
    Fixed { bandwidth: f64 },
    Median,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Median
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: f64,
}

impl MmdConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(FilterError::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(MmdConfig { bandwidth })
    }
}

fn kernel_mean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: f64) -> f64 {
    let scale = -1.0 / (2.0 * bandwidth * bandwidth);
    let mut total = 0.0;
    for u in a.rows() {
        let mut row = 0.0;
        for v in b.rows() {
            let sq: f64 = u.iter().zip(v.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            row += (sq * scale).exp();
        }
        total += row;
    }
    total / (a.nrows() as f64 * b.nrows() as f64)
}

fn check_sets(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(FilterError::Empty("mmd sample set"));
    }
    if a.ncols() != b.ncols() {
        return Err(FilterError::DimensionMismatch {
            context: "mmd sample width",
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    Ok(())
}

/// Biased (V-statistic) estimate of MMD², diagonal terms included.
pub fn mmd_squared(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, cfg: &MmdConfig) -> Result<f64> {
    check_sets(a, b)?;
    let h = cfg.bandwidth;
    Ok(kernel_mean(a, a, h) + kernel_mean(b, b, h) - 2.0 * kernel_mean(a, b, h))
}

/// A fixed reference sample set with its self-similarity term cached.
#[derive(Debug, Clone)]
pub struct MmdReference {
    samples: Array2<f64>,
    cfg: MmdConfig,
    self_term: f64,
}

impl MmdReference {
    pub fn new(samples: Array2<f64>, cfg: MmdConfig) -> Result<Self> {
        check_sets(samples.view(), samples.view())?;
        let self_term = kernel_mean(samples.view(), samples.view(), cfg.bandwidth);
        Ok(MmdReference {
            samples,
            cfg,
            self_term,
        })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    /// Same value as `mmd_squared(other, reference)`.
    pub fn mmd_squared(&self, other: ArrayView2<'_, f64>) -> Result<f64> {
        check_sets(other, self.samples.view())?;
        let h = self.cfg.bandwidth;
        Ok(kernel_mean(other, other, h) + self.self_term - 2.0 * kernel_mean(other, self.samples.view(), h))
    }
}

/// Every `⌈N/cap⌉`-th row, at most `cap` rows.
pub fn subsample_rows(samples: ArrayView2<'_, f64>, cap: usize) -> Array2<f64> {
    let n = samples.nrows();
    if n <= cap || cap == 0 {
        return samples.to_owned();
    }
    let stride = n.div_ceil(cap);
    let idx: Vec<usize> = (0..n).step_by(stride).take(cap).collect();
    samples.select(Axis(0), &idx)
}

/// Result of the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthEstimate {
    pub bandwidth: f64,
    /// Set when the median distance fell below the floor.
    pub degenerate: bool,
}

/// Median pairwise Euclidean distance over at most [`MEDIAN_CAP`] rows,
/// floored at [`BANDWIDTH_FLOOR`].
pub fn median_bandwidth(samples: ArrayView2<'_, f64>) -> Result<BandwidthEstimate> {
    if samples.nrows() < 2 {
        return Err(FilterError::InvalidConfig("median heuristic needs at least 2 samples".into()));
    }
    let pts = subsample_rows(samples, MEDIAN_CAP);
    let n = pts.nrows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = pts
                .row(i)
                .iter()
                .zip(pts.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    Ok(if median < BANDWIDTH_FLOOR {
        BandwidthEstimate {
            bandwidth: BANDWIDTH_FLOOR,
            degenerate: true,
        }
    } else {
        BandwidthEstimate {
            bandwidth: median,
            degenerate: false,
        }
    })
}

/// `‖mean(ensemble_t) − X_t‖²` for `t = 1..=T`; `ensembles[0]` is the
/// initial ensemble and is skipped.
pub fn state_mse(ensembles: &[Ensemble], truth: &Trajectory) -> Result<Vec<f64>> {
    if ensembles.len() != truth.len() + 1 {
        return Err(FilterError::DimensionMismatch {
            context: "state_mse: ensembles vs truth steps",
            expected: truth.len() + 1,
            actual: ensembles.len(),
        });
    }
    Ok(ensembles[1..]
        .iter()
        .zip(truth.states.rows())
        .map(|(e, x)| {
            let d = e.mean() - x;
            d.dot(&d)
        })
        .collect())
}

/// Fraction of particles whose `coordinate` is positive.
pub fn mode_balance(particles: ArrayView2<'_, f64>, coordinate: usize) -> Result<f64> {
    if coordinate >= particles.ncols() {
        return Err(FilterError::DimensionMismatch {
            context: "mode_balance coordinate",
            expected: particles.ncols(),
            actual: coordinate,
        });
    }
    if particles.nrows() == 0 {
        return Err(FilterError::Empty("mode_balance"));
    }
    let positive = particles.column(coordinate).iter().filter(|&&v| v > 0.0).count();
    Ok(positive as f64 / particles.nrows() as f64)
}

/// Weighted [`mode_balance`] of an ensemble.
pub fn ensemble_mode_balance(ens: &Ensemble, coordinate: usize) -> Result<f64> {
    match ens.weights() {
        None => mode_balance(ens.particles().view(), coordinate),
        Some(w) => {
            mode_balance(ens.particles().view(), coordinate)?;
            Ok(ens
                .particles()
                .column(coordinate)
                .iter()
                .zip(w)
                .filter(|(v, _)| **v > 0.0)
                .map(|(_, w)| w)
                .sum())
        }
    }
}

/// Rows of samples drawn from an ensemble for comparison against unweighted
/// sets: the particles themselves, or a weighted resample.
pub fn equally_weighted(ens: &Ensemble, rng: &crate::rng::RandomSource) -> Result<Array2<f64>> {
    match ens.weights() {
        None => Ok(ens.particles().clone()),
        Some(w) => {
            let idx = crate::filters::multinomial_indices(w, ens.len(), rng);
            Ok(ens.particles().select(Axis(0), &idx))
        }
    }
}

/// The closed vocabulary of metric names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mmd2,
    Mse,
    Ess,
    ModeBalance,
    WallSeconds,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mmd2, Metric::Mse, Metric::Ess, Metric::ModeBalance, Metric::WallSeconds];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mmd2 => "mmd2",
            Metric::Mse => "mse",
            Metric::Ess => "ess",
            Metric::ModeBalance => "mode_balance",
            Metric::WallSeconds => "wall_seconds",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FilterError::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub time_index: usize,
    pub method: String,
    pub metric: Metric,
    pub value: f64,
    pub run_id: String,
}

/// Rows of `(time_index, method, metric, value, run_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSeries {
    pub rows: Vec<MetricRow>,
}

impl MetricSeries {
    pub const HEADER: [&'static str; 5] = ["time_index", "method", "metric", "value", "run_id"];

    pub fn push(&mut self, time_index: usize, method: &str, metric: Metric, value: f64, run_id: &str) -> Result<()> {
        if !value.is_finite() {
            return Err(FilterError::NonFinite("metric value"));
        }
        self.rows.push(MetricRow {
            time_index,
            method: method.to_string(),
            metric,
            value,
            run_id: run_id.to_string(),
        });
        Ok(())
    }

    /// Appends one row per step, with time indices starting at 1.
    pub fn extend_series(&mut self, method: &str, metric: Metric, values: &[f64], run_id: &str) -> Result<()> {
        for (t, v) in values.iter().enumerate() {
            self.push(t + 1, method, metric, *v, run_id)?;
        }
        Ok(())
    }

    pub fn extend(&mut self, other: MetricSeries) {
        self.rows.extend(other.rows);
    }

    /// Values of one `(method, metric)` pair in row order.
    pub fn values(&self, method: &str, metric: Metric) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let csv_err = |e: csv::Error| FilterError::InvalidConfig(format!("csv write failed: {e}"));
        out.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.time_index.to_string(),
                r.method.clone(),
                r.metric.to_string(),
                format_float(r.value),
                r.run_id.clone(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| FilterError::io("metrics csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let csv_err = |e: csv::Error| FilterError::InvalidConfig(format!("csv read failed: {e}"));
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.iter().ne(Self::HEADER) {
            return Err(FilterError::InvalidConfig(format!("unexpected metrics header {header:?}")));
        }
        let mut series = MetricSeries::default();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let parse_err = |what: &str| FilterError::InvalidConfig(format!("bad {what} in metrics row {rec:?}"));
            series.rows.push(MetricRow {
                time_index: rec[0].parse().map_err(|_| parse_err("time_index"))?,
                method: rec[1].to_string(),
                metric: rec[2].parse()?,
                value: rec[3].parse().map_err(|_| parse_err("value"))?,
                run_id: rec[4].to_string(),
            });
        }
        Ok(series)
    }
}

/// Shortest round-trip decimal form.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}
