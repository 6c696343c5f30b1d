use super::*;
use crate::conductivity::FiberParams;
use crate::nn::{Head, InputScaling, Mlp, MlpSpec};
use crate::trainer::{Networks, TrainingConfig};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "small".into(),
        domain: DomainConfig::Grid { n: 9, half_width: 1.0 },
        samples_total: 40,
        training: TrainingConfig {
            iterations: 30,
            history_every: 10,
            activation_net: crate::trainer::NetShape { depth: 2, width: 6 },
            conductivity_net: crate::trainer::NetShape { depth: 2, width: 4 },
            ..TrainingConfig::preset_2d()
        },
        ..ExperimentConfig::preset_2d()
    }
}

#[test]
fn two_region_rule() {
    let lower = two_region_params(&crate::Vec3::new(-0.5, 0.2, 0.0));
    let upper = two_region_params(&crate::Vec3::new(0.5, 0.2, 0.0));
    assert_eq!((lower.a, lower.e1, lower.e2), (1.0, 1.0, 0.5));
    assert_eq!((upper.a, upper.e1, upper.e2), (0.0, 1.0, 0.5));
}

#[test]
fn generated_samples_split_and_are_reproducible() {
    let cfg = small_config();
    let domain = build_domain(&cfg).unwrap();
    let a = generate(&cfg, &domain).unwrap();
    assert_eq!(a.samples.len(), 40);
    let per_map: Vec<usize> = (0..3).map(|m| a.samples.iter().filter(|s| s.map_id == m).count()).collect();
    assert_eq!(per_map, vec![14, 13, 13]);
    assert_eq!(a.sources.len(), 5);
    assert_eq!(a.holdout, a.sources[3]);
    let mut distinct = a.sources.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 5);
    assert!(a.samples.iter().all(|s| s.time_ms >= 0.0 && s.z == 0.0));
    assert_eq!(generate(&cfg, &domain).unwrap(), a);
    let other = ExperimentConfig { seed: 1, ..cfg.clone() };
    assert_ne!(generate(&other, &domain).unwrap().samples, a.samples);
}

#[test]
fn shared_points_reuse_locations() {
    let cfg = ExperimentConfig {
        shared_points: true,
        ..small_config()
    };
    let domain = build_domain(&cfg).unwrap();
    let d = generate(&cfg, &domain).unwrap();
    let pos = |m: usize| -> Vec<(f64, f64)> { d.samples.iter().filter(|s| s.map_id == m).map(|s| (s.x, s.y)).collect() };
    assert_eq!(pos(0)[..13], pos(1)[..]);
    assert_eq!(pos(1), pos(2));
}

#[test]
fn noise_and_time_unit_scale_samples() {
    let cfg = small_config();
    let domain = build_domain(&cfg).unwrap();
    let clean = generate(&cfg, &domain).unwrap();
    let scaled = generate(&ExperimentConfig { time_unit_ms: 50.0, ..cfg.clone() }, &domain).unwrap();
    for (a, b) in clean.samples.iter().zip(&scaled.samples) {
        assert!((a.time_ms * 50.0 - b.time_ms).abs() < 1e-9 * b.time_ms.max(1.0));
    }
    let noisy = generate(&ExperimentConfig { noise_ms: 0.5, ..cfg }, &domain).unwrap();
    let diff: Vec<f64> = clean.samples.iter().zip(&noisy.samples).map(|(a, b)| b.time_ms - a.time_ms).collect();
    assert!(diff.iter().any(|d| d.abs() > 1e-3));
    assert!(diff.iter().all(|d| d.abs() < 5.0 * 0.5));
}

/// Networks whose conductivity output is the constant `p`.
fn constant_model(p: FiberParams, cap: f64, maps: usize) -> TrainedModel {
    let logit = |y: f64| (y / (1.0 - y)).ln();
    let spec = MlpSpec::uniform(2, 1, 2, vec![Head::Tanh, Head::ScaledSigmoid { cap }, Head::ScaledSigmoid { cap }]);
    let mut params = vec![0.0; spec.param_count()];
    let n = params.len();
    params[n - 3] = p.a.atanh();
    params[n - 2] = logit(p.e1 / cap);
    params[n - 1] = logit(p.e2 / cap);
    let conductivity = Mlp::from_parts(spec, InputScaling::identity(2), params).unwrap();
    let activation = (0..maps)
        .map(|m| Mlp::new(MlpSpec::uniform(2, 1, 2, vec![Head::Sigmoid]), InputScaling::identity(2), m as u64).unwrap())
        .collect();
    TrainedModel::new(Networks { activation, conductivity }, 2, 3.0, cap)
}

#[test]
fn exact_conductivity_gives_zero_fiber_error() {
    let truth = FiberParams { a: 0.6, e1: 0.9, e2: 0.3 };
    let cfg = ExperimentConfig {
        fibers: FiberTruth::Constant {
            a: truth.a,
            e1: truth.e1,
            e2: truth.e2,
        },
        ..small_config()
    };
    let domain = build_domain(&cfg).unwrap();
    let data = generate(&cfg, &domain).unwrap();
    let model = constant_model(truth, 2.25, 3);
    let eval = evaluate_model(&cfg, &domain, &model, &data.samples, Some(data.holdout)).unwrap();
    for region in ["all", "smooth"] {
        let r = eval.row(region);
        assert!(r.fiber_error_mean_deg.unwrap() < 1e-5, "{r:?}");
        assert_eq!(r.vertices, 81);
        assert!(r.unseen_rmse_ms.unwrap() < 1e-9);
        assert!(r.rmse_ms.unwrap() > 0.0);
    }
}

#[test]
fn smooth_region_excludes_interface_band() {
    let cfg = small_config();
    let domain = build_domain(&cfg).unwrap();
    assert!((domain.spacing - 0.25).abs() < 1e-12);
    for (v, x) in domain.mesh.vertices().iter().enumerate() {
        assert_eq!(domain.smooth[v], (x.x + x.y).abs() / 2f64.sqrt() > 0.5);
    }
    assert!(domain.smooth.iter().any(|s| !s) && domain.smooth.iter().any(|s| *s));
}

#[test]
fn baseline_with_one_map_is_never_unique() {
    let cfg = ExperimentConfig {
        maps: 1,
        ..small_config()
    };
    let domain = build_domain(&cfg).unwrap();
    let data = generate(&cfg, &domain).unwrap();
    let (report, eval) = run_baseline(&cfg, &domain, &data.samples, Some(data.holdout)).unwrap();
    assert!(report.none_unique());
    assert_eq!(eval.row("all").unique_fraction, Some(0.0));
    assert!(eval.row("all").fiber_error_mean_deg.is_some());
}

#[test]
fn commands_write_expected_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let data_dir = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    cmd_generate(&cfg, &data_dir).unwrap();
    for f in [RESOLVED_CONFIG, DATASET_MANIFEST, TRUTH_FILE, TRUE_FIBERS_FILE] {
        assert!(data_dir.join(f).exists(), "{f}");
    }
    let rows: usize = (0..3)
        .map(|m| crate::io::read_samples(&data_dir.join(samples_file(m))).unwrap().len())
        .sum();
    assert_eq!(rows, 40);
    let first = std::fs::read(data_dir.join(samples_file(0))).unwrap();
    cmd_generate(&cfg, &data_dir).unwrap();
    assert_eq!(std::fs::read(data_dir.join(samples_file(0))).unwrap(), first);

    let outcome = cmd_train(&cfg, &data_dir, &run_dir).unwrap();
    assert_eq!(outcome.history.len(), 4);
    let resolved = ExperimentConfig::load(&run_dir.join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(resolved, cfg);
    let eval = cmd_evaluate(&cfg, &data_dir, &run_dir.join(MODEL_FILE), &run_dir).unwrap();
    assert_eq!(eval.rows.len(), 2);
    let back: Vec<MetricsRow> = crate::io::read_csv(&run_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(back, eval.rows);
    let fields = crate::io::load_poly_data(&run_dir.join(FIELDS_FILE)).unwrap();
    assert!(fields.point_vectors("fiber").is_some());
    assert!(fields.point_scalars("unseen_learned").is_some());
    cmd_baseline(&cfg, &data_dir, &run_dir).unwrap();
    assert!(run_dir.join(BASELINE_METRICS_FILE).exists());

    let wrong = ExperimentConfig { maps: 2, ..cfg.clone() };
    assert_eq!(cmd_train(&wrong, &data_dir, &run_dir).unwrap_err().exit_code(), 2);
    assert_eq!(cmd_train(&cfg, &tmp.path().join("missing"), &run_dir).unwrap_err().exit_code(), 4);
}

#[test]
fn divergence_maps_to_its_exit_code_and_keeps_history() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.training.learning_rate = 1e300;
    cfg.training.eikonal_weight = 1e300;
    let data_dir = tmp.path().join("data");
    cmd_generate(&cfg, &data_dir).unwrap();
    let err = cmd_train(&cfg, &data_dir, tmp.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(tmp.path().join(HISTORY_FILE).exists());
}

#[test]
fn unknown_truth_limits_metrics_to_fit() {
    let cfg = small_config();
    let domain = build_domain(&cfg).unwrap();
    let data = generate(&cfg, &domain).unwrap();
    let blind_cfg = ExperimentConfig {
        fibers: FiberTruth::Unknown,
        ..cfg.clone()
    };
    let blind = build_domain(&blind_cfg).unwrap();
    assert!(generate(&blind_cfg, &blind).is_err());
    let model = constant_model(FiberParams { a: 0.0, e1: 1.0, e2: 0.5 }, 2.25, 3);
    let eval = evaluate_model(&blind_cfg, &blind, &model, &data.samples, None).unwrap();
    let r = eval.row("all");
    assert!(r.fiber_error_mean_deg.is_none() && r.unseen_rmse_ms.is_none());
    assert!(r.rmse_ms.is_some());
}

#[test]
fn sweep_runs_every_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.training.iterations = 5;
    cfg.sweep = Some(SweepConfig {
        speed_tv_weights: vec![1e-5, 1e-3],
        map_counts: vec![1, 3],
        seeds: vec![0],
    });
    let rows = cmd_sweep(&cfg, tmp.path()).unwrap();
    // 4 runs, each with network and baseline rows for two regions.
    assert_eq!(rows.len(), 16);
    assert!(tmp.path().join(SWEEP_METRICS_FILE).exists());
    let entry = cfg.sweep_entry(1e-3, 1, 0);
    assert!(sweep_entry_dir(tmp.path(), &entry).join(MODEL_FILE).exists());
}
