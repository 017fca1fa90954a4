use ndarray::Array2;
use otfilter::ensemble::{Ensemble, Trajectory};
use otfilter::filters::{
    effective_sample_size, multinomial_resample, normalize_log_weights, run_filter, MethodConfig, RunOptions,
};
use otfilter::harness::parse_experiment_spec;
use otfilter::metrics::{mmd_squared, MmdConfig};
use otfilter::model::simulate_truth;
use otfilter::models::DynamicPolynomialModel;
use otfilter::nn::{DenseNet, NetLayout};
use otfilter::oracle::{grid_from_log_density, GridSpec};
use otfilter::rng::RandomSource;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn normalized_weights_sum_to_one(log_w in prop::collection::vec(-700.0f64..700.0, 1..200)) {
        let w = normalize_log_weights(&log_w, 1).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ess_lies_between_one_and_n(log_w in prop::collection::vec(-30.0f64..30.0, 1..200)) {
        let w = normalize_log_weights(&log_w, 1).unwrap();
        let ess = effective_sample_size(&w);
        let n = w.len() as f64;
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= n + 1e-9, "ess {} n {}", ess, n);
    }

    #[test]
    fn resampling_keeps_support(log_w in prop::collection::vec(-20.0f64..20.0, 2..60), seed in any::<u64>()) {
        let n = log_w.len();
        let w = normalize_log_weights(&log_w, 1).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let ens = Ensemble::from_rows(&rows).unwrap();
        let out = multinomial_resample(&ens, &w, &RandomSource::new(seed)).unwrap();
        prop_assert_eq!(out.len(), n);
        for v in out.particles().iter() {
            prop_assert!(w[*v as usize] > 0.0);
        }
    }

    #[test]
    fn mmd_is_nonnegative_and_symmetric(a in matrix(12, 2), b in matrix(9, 2), h in 0.05f64..5.0) {
        let cfg = MmdConfig::new(h).unwrap();
        let ab = mmd_squared(a.view(), b.view(), &cfg).unwrap();
        let ba = mmd_squared(b.view(), a.view(), &cfg).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn grid_density_ignores_constant_offsets(c in -300.0f64..300.0, mu in -1.0f64..1.0) {
        let spec = GridSpec::for_prior(&[0.0], &[1.0]).unwrap();
        let base = grid_from_log_density(&spec, |x| Ok(-0.5 * (x[0] - mu).powi(2))).unwrap();
        let shifted = grid_from_log_density(&spec, |x| Ok(-0.5 * (x[0] - mu).powi(2) + c)).unwrap();
        for (p, q) in base.density.iter().zip(shifted.density.iter()) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1e-300));
        }
    }

    #[test]
    fn batch_forward_equals_row_loop(x in matrix(7, 3), width in 1usize..16, blocks in 0usize..3, seed in any::<u64>()) {
        let net = DenseNet::init(NetLayout::new(3, width, blocks, 2), &RandomSource::new(seed), false).unwrap();
        let batch = net.forward(&x).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = net.forward(&row.to_owned().insert_axis(ndarray::Axis(0))).unwrap();
            prop_assert_eq!(single.row(0), batch.row(i));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), method in prop::sample::select(vec!["enkf", "sir"])) {
        let model = DynamicPolynomialModel::default();
        let truth: Trajectory = simulate_truth(&model, 5, &RandomSource::new(seed)).unwrap();
        let m = MethodConfig::default_for(method, "dynamic_bimodal").unwrap();
        let run = || run_filter(&m, &model, &truth, 64, &RandomSource::new(seed ^ 1), &RunOptions::default()).unwrap();
        prop_assert_eq!(run().ensembles, run().ensembles);
    }

    #[test]
    fn resolved_specs_roundtrip(particles in 1usize..5000, steps in 1usize..300, seeds in prop::collection::vec(any::<u64>(), 1..6)) {
        let text = format!(
            r#"{{"model":"dynamic_cubic","methods":["enkf","sir"],"particles":{particles},"steps":{steps},"seeds":{}}}"#,
            serde_json::to_string(&seeds).unwrap()
        );
        let spec = parse_experiment_spec(&text).unwrap();
        let again = parse_experiment_spec(&serde_json::to_string(&spec).unwrap()).unwrap();
        prop_assert_eq!(spec, again);
    }
}
