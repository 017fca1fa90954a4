use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{FilterError, Result};
use crate::metrics::format_float;
use crate::model::StateSpaceModel;
use crate::rng::RandomSource;

/// Tolerance on the Riemann mass of a normalized grid density.
pub const MASS_TOLERANCE: f64 = 1e-8;

/// A uniform axis of `points` cells covering `[lo, hi]`, evaluated at cell midpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(hi > lo) || points == 0 {
            return Err(FilterError::InvalidConfig(format!("bad grid axis [{lo}, {hi}] with {points} points")));
        }
        Ok(GridAxis { lo, hi, points })
    }

    /// `mean ± 8·std`.
    pub fn around(mean: f64, std: f64, points: usize) -> Result<Self> {
        GridAxis::new(mean - 8.0 * std, mean + 8.0 * std, points)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.points as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points).map(|k| self.lo + (k as f64 + 0.5) * h).collect()
    }
}

/// One- or two-dimensional tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(FilterError::InvalidConfig(format!(
                "grid oracle supports 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        Ok(GridSpec { axes })
    }

    /// `±8` standard deviations around a product prior; 2000 points for
    /// one dimension and 400 per axis for two.
    pub fn for_prior(mean: &[f64], std: &[f64]) -> Result<Self> {
        let points = if mean.len() == 1 { 2000 } else { 400 };
        let axes = mean
            .iter()
            .zip(std)
            .map(|(&m, &s)| GridAxis::around(m, s, points))
            .collect::<Result<Vec<_>>>()?;
        GridSpec::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::step).product()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid nodes, last axis fastest.
    pub fn points(&self) -> Array2<f64> {
        let nodes: Vec<Vec<f64>> = self.axes.iter().map(GridAxis::nodes).collect();
        match nodes.as_slice() {
            [a] => Array2::from_shape_fn((a.len(), 1), |(i, _)| a[i]),
            [a, b] => Array2::from_shape_fn((a.len() * b.len(), 2), |(k, j)| {
                if j == 0 {
                    a[k / b.len()]
                } else {
                    b[k % b.len()]
                }
            }),
            _ => unreachable!("grid dimension checked at construction"),
        }
    }
}

/// A density tabulated on the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub spec: GridSpec,
    pub points: Array2<f64>,
    /// Normalized density at each node, same row order as `points`.
    pub density: Array1<f64>,
    /// `log ∫ h(y|x) π(x) dx` of the unnormalized product (Riemann sum).
    pub log_normalizer: f64,
}

impl GridPosterior {
    /// Riemann mass `Σ ρ · ΔV`.
    pub fn mass(&self) -> f64 {
        self.density.sum() * self.spec.cell_volume()
    }

    fn check_normalized(&self) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(FilterError::Unnormalized(mass));
        }
        Ok(())
    }

    /// Writes one row per node: the coordinates then the density.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let csv_err = |e: csv::Error| FilterError::InvalidConfig(format!("csv write failed: {e}"));
        let mut header: Vec<String> = (0..self.spec.dim()).map(|d| format!("x{d}")).collect();
        header.push("density".into());
        out.write_record(&header).map_err(csv_err)?;
        for (p, d) in self.points.rows().into_iter().zip(self.density.iter()) {
            let mut rec: Vec<String> = p.iter().map(|v| format_float(*v)).collect();
            rec.push(format_float(*d));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| FilterError::io("grid csv", e))?;
        Ok(())
    }
}

/// Builds a normalized grid density from pointwise log-values.
pub fn grid_from_log_density(spec: &GridSpec, log_density: impl Fn(&[f64]) -> Result<f64>) -> Result<GridPosterior> {
    let points = spec.points();
    let mut log_vals = Vec::with_capacity(points.nrows());
    for p in points.rows() {
        let v = log_density(p.as_slice().expect("standard layout"))?;
        if v.is_nan() || v == f64::INFINITY {
            return Err(FilterError::NonFinite("grid log-density"));
        }
        log_vals.push(v);
    }
    let (argmax, &max) = log_vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    let vanishing = || FilterError::VanishingNormalizer {
        max_log_density: max,
        location: points.row(argmax).to_vec(),
    };
    if max == f64::NEG_INFINITY {
        return Err(vanishing());
    }
    let vol = spec.cell_volume();
    let shifted: Array1<f64> = log_vals.iter().map(|v| (v - max).exp()).collect();
    let shifted_mass = shifted.sum() * vol;
    let log_normalizer = max + shifted_mass.ln();
    if log_normalizer.exp() == 0.0 {
        return Err(vanishing());
    }
    Ok(GridPosterior {
        spec: spec.clone(),
        density: shifted / shifted_mass,
        points,
        log_normalizer,
    })
}

/// Bayes' rule on a grid: `ρ(x) ∝ h(y|x) π(x)` renormalized by its Riemann sum.
pub fn grid_bayes_update(
    prior_density: &dyn Fn(&[f64]) -> f64,
    model: &dyn StateSpaceModel,
    y: &[f64],
    spec: &GridSpec,
) -> Result<GridPosterior> {
    if spec.dim() != model.state_dim() {
        return Err(FilterError::DimensionMismatch {
            context: "grid dimension vs model state",
            expected: model.state_dim(),
            actual: spec.dim(),
        });
    }
    grid_from_log_density(spec, |x| {
        let p = prior_density(x);
        if p < 0.0 || !p.is_finite() {
            return Err(FilterError::InvalidConfig(format!("prior density {p} at {x:?}")));
        }
        Ok(p.ln() + model.log_likelihood(y, x)?)
    })
}

/// Riemann-sum mean and covariance.
pub fn grid_moments(gp: &GridPosterior) -> Result<(Array1<f64>, Array2<f64>)> {
    gp.check_normalized()?;
    let vol = gp.spec.cell_volume();
    let w = &gp.density * vol;
    let mean = gp.points.t().dot(&w);
    let centered = &gp.points - &mean;
    let weighted = &centered * &w.view().insert_axis(ndarray::Axis(1));
    let cov = weighted.t().dot(&centered);
    Ok((mean, cov))
}

/// Inverse-CDF draws over the flattened cells with uniform jitter inside each cell.
pub fn grid_sample(gp: &GridPosterior, count: usize, rng: &RandomSource) -> Result<Array2<f64>> {
    gp.check_normalized()?;
    let vol = gp.spec.cell_volume();
    let mut cdf = Vec::with_capacity(gp.density.len());
    let mut acc = 0.0;
    for d in gp.density.iter() {
        acc += d * vol;
        cdf.push(acc);
    }
    let steps: Vec<f64> = gp.spec.axes.iter().map(GridAxis::step).collect();
    let last = cdf.len() - 1;
    let mut stream = rng.stream();
    let mut out = Array2::zeros((count, gp.spec.dim()));
    for mut row in out.rows_mut() {
        let u = stream.random::<f64>() * acc;
        let cell = cdf.partition_point(|&c| c <= u).min(last);
        for (j, h) in steps.iter().enumerate() {
            row[j] = gp.points[[cell, j]] + (stream.random::<f64>() - 0.5) * h;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DynamicPolynomialModel, StaticSquareModel};

    fn std_normal(x: &[f64]) -> f64 {
        x.iter().map(|v| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()).product()
    }

    #[test]
    fn gaussian_grid_moments() {
        let spec = GridSpec::for_prior(&[0.0], &[1.0]).unwrap();
        let gp = grid_from_log_density(&spec, |x| Ok(-0.5 * x[0] * x[0])).unwrap();
        let (m, c) = grid_moments(&gp).unwrap();
        assert!(m[0].abs() < 1e-12);
        assert!((c[[0, 0]] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn scalar_bayes_update_matches_kalman() {
        let model = DynamicPolynomialModel {
            lambda: 1.0,
            ..DynamicPolynomialModel::with_exponent(1)
        };
        let spec = GridSpec::for_prior(&[0.0], &[1.0]).unwrap();
        let gp = grid_bayes_update(&std_normal, &model, &[1.0], &spec).unwrap();
        let (m, c) = grid_moments(&gp).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-3);
        assert!((c[[0, 0]] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn uniform_prior_flat_likelihood_is_uniform() {
        let model = DynamicPolynomialModel {
            lambda: 1e6,
            ..DynamicPolynomialModel::with_exponent(1)
        };
        let spec = GridSpec::new(vec![GridAxis::new(-1.0, 1.0, 10).unwrap()]).unwrap();
        let gp = grid_bayes_update(&|_| 1.0, &model, &[0.0], &spec).unwrap();
        assert!(gp.density.iter().all(|d| (d - 0.5).abs() < 1e-9));
    }

    #[test]
    fn squared_observation_posterior_is_sign_symmetric() {
        let model = StaticSquareModel::default();
        let spec = GridSpec::for_prior(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let gp = grid_bayes_update(&std_normal, &model, &[1.0, 1.0], &spec).unwrap();
        let n = spec.axes[0].points;
        let at = |i: usize, j: usize| gp.density[i * n + j];
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((at(i, j) - at(n - 1 - i, n - 1 - j)).abs());
                worst = worst.max((at(i, j) - at(n - 1 - i, j)).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        let (best, _) = gp
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let mode = gp.points.row(best);
        // prior pulls the mode inward from √2
        assert!(mode.iter().all(|v| (v.abs() - 2f64.sqrt()).abs() < 0.3), "{mode}");
    }

    #[test]
    fn rescaled_prior_gives_same_posterior() {
        let model = StaticSquareModel::default();
        let spec = GridSpec::for_prior(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let a = grid_bayes_update(&std_normal, &model, &[0.3, 2.0], &spec).unwrap();
        let b = grid_bayes_update(&|x| 123.0 * std_normal(x), &model, &[0.3, 2.0], &spec).unwrap();
        let worst = (&a.density - &b.density).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-12);
    }

    #[test]
    fn missing_mass_reports_location() {
        let spec = GridSpec::new(vec![GridAxis::new(0.0, 1.0, 4).unwrap()]).unwrap();
        let err = grid_from_log_density(&spec, |_| Ok(f64::NEG_INFINITY)).unwrap_err();
        assert!(matches!(err, FilterError::VanishingNormalizer { .. }));
        let err = grid_from_log_density(&spec, |x| Ok(-1e6 - x[0])).unwrap_err();
        match err {
            FilterError::VanishingNormalizer { location, .. } => assert_eq!(location, vec![0.125]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn samples_reproduce_grid_mean() {
        let spec = GridSpec::for_prior(&[0.0], &[1.0]).unwrap();
        let gp = grid_from_log_density(&spec, |x| Ok(-0.5 * (x[0] - 0.7).powi(2) / 0.25)).unwrap();
        let (m, c) = grid_moments(&gp).unwrap();
        let n = 20_000;
        let s = grid_sample(&gp, n, &RandomSource::new(5)).unwrap();
        let sm = s.column(0).mean().unwrap();
        let se = (c[[0, 0]] / n as f64).sqrt();
        assert!((sm - m[0]).abs() < 3.0 * se, "{sm} vs {}", m[0]);
    }

    #[test]
    fn unnormalized_grid_is_rejected() {
        let spec = GridSpec::for_prior(&[0.0], &[1.0]).unwrap();
        let mut gp = grid_from_log_density(&spec, |x| Ok(-0.5 * x[0] * x[0])).unwrap();
        gp.density *= 2.0;
        assert!(matches!(grid_moments(&gp), Err(FilterError::Unnormalized(_))));
    }

    #[test]
    fn csv_has_coordinates_and_density() {
        let spec = GridSpec::new(vec![GridAxis::new(0.0, 1.0, 2).unwrap(), GridAxis::new(0.0, 2.0, 2).unwrap()]).unwrap();
        let gp = grid_from_log_density(&spec, |_| Ok(0.0)).unwrap();
        let mut buf = Vec::new();
        gp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x0,x1,density\n0.25,0.5,0.5\n0.25,1.5,0.5\n0.75,0.5,0.5\n0.75,1.5,0.5\n");
    }
}
