use std::collections::BTreeMap;
use std::path::Path;

use dris::config::{DatasetConfig, ExperimentConfig, Method, NoiseConfig, NoiseKind};
use dris::core::certify::PlantedEnsemble;
use dris::core::data::LabeledDataset;
use dris::harness::{self, Axis, MetricsRow};
use dris::io;

fn small(methods: Vec<Method>, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synthetic_benchmark(methods, seeds);
    cfg.name = "small".into();
    cfg.dataset = DatasetConfig::Synthetic {
        n: 400,
        d: 5,
        rare_ratio: 0.2,
        var_rare: 25.0,
        var_common: 1.0,
        rare_offset: 8.0,
        test_n: 400,
        seed: None,
    };
    cfg.proxies.k = 3;
    cfg.proxies.train.epochs = 12;
    cfg.target.train.epochs = 12;
    cfg
}

fn uniform(rate: f64) -> NoiseConfig {
    NoiseConfig { kind: NoiseKind::Uniform, rate }
}

fn by_method(rows: &[MetricsRow], seed: u64) -> BTreeMap<String, MetricsRow> {
    rows.iter().filter(|r| r.seed == seed).map(|r| (r.method.clone(), r.clone())).collect()
}

#[test]
fn random_at_full_alpha_matches_uniform_sgd() {
    let mut cfg = small(vec![Method::UniformSgd, Method::Random], vec![0, 1]);
    cfg.alpha = 1.0;
    let res = harness::run_experiment(&cfg).unwrap();
    for seed in [0, 1] {
        let acc: Vec<f64> = res.iter().filter(|r| r.seed == seed).map(|r| r.test_accuracy).collect();
        assert_eq!(acc.len(), 2);
        assert_eq!(acc[0], acc[1], "seed {seed}");
    }
}

#[test]
fn full_alpha_makes_static_methods_identical() {
    let methods = vec![Method::Random, Method::DrisStatic, Method::El2n, Method::Consensus, Method::Forgetting, Method::Aum];
    let mut cfg = small(methods, vec![3]);
    cfg.alpha = 1.0;
    cfg.noise = uniform(0.1);
    let res = harness::run_experiment(&cfg).unwrap();
    assert_eq!(res.len(), 6);
    assert!(res.iter().all(|r| r.test_accuracy == res[0].test_accuracy));
    assert!(res.iter().all(|r| r.subset_size == 400));
}

#[test]
fn rerun_is_bit_identical_except_wall_time() {
    let mut cfg = small(vec![Method::DrisStatic, Method::DrisOnline, Method::GradNormIs], vec![5]);
    cfg.noise = uniform(0.2);
    let strip = |rows: Vec<harness::RunMetrics>| -> Vec<_> {
        rows.into_iter().map(|mut r| {
            r.wall_seconds = 0.0;
            r
        }).collect()
    };
    let a = strip(harness::run_experiment(&cfg).unwrap());
    let b = strip(harness::run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn every_method_sees_the_same_mask() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(vec![Method::UniformSgd, Method::DrisStatic, Method::LossIs, Method::Random], vec![0, 1]);
    cfg.noise = uniform(0.15);
    cfg.output_dir = Some(dir.path().to_path_buf());
    harness::run_experiment(&cfg).unwrap();
    let rows = harness::read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    for seed in [0, 1] {
        let hashes: Vec<&str> = rows.iter().filter(|r| r.seed == seed).map(|r| r.mask_hash.as_str()).collect();
        assert!(hashes.iter().all(|h| *h == hashes[0]));
        let file = std::fs::read_to_string(dir.path().join(format!("seed-{seed}/mask.hash"))).unwrap();
        assert_eq!(file.trim(), hashes[0]);
        let prepared = harness::prepare_data(&cfg, seed).unwrap();
        assert_eq!(io::mask_hash(prepared.train.truth().corrupt_mask()), hashes[0]);
        assert_eq!(prepared.train.truth().num_corrupt(), 60);
    }
    assert_ne!(rows[0].mask_hash, rows[4].mask_hash);
}

#[test]
fn seed_directory_holds_histogram_ranks_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(vec![Method::DrisStatic], vec![2]);
    cfg.noise = uniform(0.1);
    cfg.output_dir = Some(dir.path().to_path_buf());
    harness::run_experiment(&cfg).unwrap();
    let seed_dir = dir.path().join("seed-2");
    for f in ["mask.hash", "histogram.csv", "ranks.csv", "certificate.json"] {
        assert!(seed_dir.join(f).exists(), "{f}");
    }
    let mut clean = 0;
    let mut corrupt = 0;
    let mut r = csv::Reader::from_path(seed_dir.join("histogram.csv")).unwrap();
    let mut bins = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        clean += rec[2].parse::<usize>().unwrap();
        corrupt += rec[3].parse::<usize>().unwrap();
        bins += 1;
    }
    assert_eq!(bins, 50);
    assert_eq!((clean, corrupt), (360, 40));
    let ranks = io::read_rank_matrix(&seed_dir.join("ranks.csv"), 6).unwrap();
    assert_eq!((ranks.num_examples(), ranks.num_proxies()), (400, 3));
    let cert: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(seed_dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["params"]["k"], 3);
    assert!(cert["theta_star"].as_f64().unwrap() > 0.0);
}

#[test]
fn proxies_and_plans_depend_only_on_observed_data() {
    let mut cfg = small(vec![Method::DrisStatic], vec![4]);
    cfg.noise = uniform(0.2);
    let prepared = harness::prepare_data(&cfg, 4).unwrap();
    let obs = prepared.train.observed();
    // same observed data, ground truth erased
    let blind = LabeledDataset::new(obs.features().clone(), obs.labels().to_vec(), obs.num_classes()).unwrap();
    assert_eq!(blind.truth().num_corrupt(), 0);
    let a = harness::train_proxies(obs, &cfg.proxies, 4).unwrap();
    let b = harness::train_proxies(blind.observed(), &cfg.proxies, 4).unwrap();
    assert_eq!(a, b);
    for m in [Method::DrisStatic, Method::DrisOnline, Method::Aum, Method::Hybrid(0.3)] {
        let pa = harness::method_plan(m, Some(&a), obs, 0.25, 0.1, 4).unwrap();
        let pb = harness::method_plan(m, Some(&b), blind.observed(), 0.25, 0.1, 4).unwrap();
        assert_eq!(pa, pb, "{m}");
    }
}

#[test]
fn zero_noise_cell_has_no_corruption_anywhere() {
    let dir = tempfile::tempdir().unwrap();
    let methods = vec![Method::UniformSgd, Method::Random, Method::DrisStatic, Method::DrisOnline, Method::El2n, Method::LossIs];
    let mut cfg = small(methods, vec![0, 1]);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let rows = harness::sweep(&cfg, Axis::Eps, &[0.0, 0.2]).unwrap();
    assert!(rows.iter().all(MetricsRow::is_ok), "{:?}", rows.iter().find(|r| !r.is_ok()));
    let zero: Vec<_> = rows.iter().filter(|r| r.value == "0").collect();
    assert_eq!(zero.len(), 12);
    assert!(zero.iter().all(|r| r.frac_corrupt_in_subset == Some(0.0) && r.noise == "none"));
    assert!(rows.iter().filter(|r| r.value == "0.2").all(|r| r.noise == "uniform"));
    assert!(dir.path().join("eps=0.2/seed-1/mask.hash").exists());
    let on_disk = harness::read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(on_disk.len(), rows.len());
}

#[test]
fn failing_cells_are_recorded_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(vec![Method::DrisStatic, Method::UniformSgd], vec![0]);
    cfg.output_dir = Some(dir.path().to_path_buf());
    // alpha = 0.001 keeps no example out of 400
    let rows = harness::sweep(&cfg, Axis::Alpha, &[0.001, 0.5]).unwrap();
    let tiny = by_method(&rows.iter().filter(|r| r.value == "0.001").cloned().collect::<Vec<_>>(), 0);
    assert_eq!(tiny["dris-static"].status, "error");
    assert!(tiny["dris-static"].error.contains("keeps no examples"));
    assert!(tiny["uniform-sgd"].is_ok());
    assert!(rows.iter().filter(|r| r.value == "0.5").all(MetricsRow::is_ok));
    let on_disk = harness::read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(on_disk.len(), 4);
}

#[test]
fn run_experiment_reports_the_failing_seed() {
    let mut cfg = small(vec![Method::DrisStatic], vec![7]);
    cfg.alpha = 0.001;
    match harness::run_experiment(&cfg) {
        Err(dris::Error::Seed { seed, .. }) => assert_eq!(seed, 7),
        other => panic!("{other:?}"),
    }
}

#[test]
fn partial_rows_are_flushed_before_an_abort() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(vec![Method::UniformSgd, Method::DrisStatic], vec![1]);
    cfg.alpha = 0.001;
    cfg.output_dir = Some(dir.path().to_path_buf());
    assert!(harness::run_experiment(&cfg).is_err());
    let rows = harness::read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].is_ok() && !rows[1].is_ok());
}

#[test]
fn targeted_noise_flips_the_configured_count() {
    let mut cfg = small(vec![Method::UniformSgd], vec![0]);
    cfg.noise = NoiseConfig { kind: NoiseKind::Targeted, rate: 0.1 };
    let a = harness::prepare_data(&cfg, 0).unwrap();
    let b = harness::prepare_data(&cfg, 0).unwrap();
    assert_eq!(a.train.truth().num_corrupt(), 40);
    assert_eq!(a.train.truth().corrupt_mask(), b.train.truth().corrupt_mask());
}

#[test]
fn k_sweep_on_planted_model_has_positive_gap() {
    let rows = harness::k_ablation(&PlantedEnsemble::default(), &[2, 4, 8, 16], 3, 50).unwrap();
    for r in &rows {
        assert!(r.empirical_gap > 0.0, "K={}", r.k);
        assert_eq!(r.histogram.corrupt.iter().sum::<usize>(), 200);
        assert_eq!(r.histogram.clean.iter().sum::<usize>(), 1800);
    }
}

#[test]
fn planted_bulk_sits_below_clean_boundary_median() {
    let pe = PlantedEnsemble::default();
    let draw = pe.sample(8, 11).unwrap();
    let var = dris::core::scores::rank_variance(&draw.ranks).unwrap().into_values();
    let bdry: Vec<f64> = var.iter().zip(&draw.bdry_mask).filter(|(_, &b)| b).map(|(v, _)| *v).collect();
    let cut = dris::core::stats::median(&bdry).unwrap();
    let corr: Vec<f64> = var.iter().zip(&draw.corrupt_mask).filter(|(_, &c)| c).map(|(v, _)| *v).collect();
    let below = corr.iter().filter(|&&v| v < cut).count() as f64 / corr.len() as f64;
    assert!(below >= 0.95, "{below}");
}

#[test]
fn empty_corrupt_set_gives_zero_corrupt_counts() {
    let h = harness::histogram(&[0.01, 0.2, 0.05], &[false; 3], 10).unwrap();
    assert!(h.corrupt.iter().all(|&c| c == 0));
    assert_eq!(h.clean.iter().sum::<usize>(), 3);
}

#[test]
fn metrics_with_foreign_header_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    std::fs::write(&p, "seed,method,test_accuracy\n0,a,90\n").unwrap();
    assert!(matches!(harness::read_metrics(&p), Err(dris::Error::Schema(_))));
}

#[test]
fn csv_dataset_config_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(vec![Method::UniformSgd], vec![0]);
    let prepared = harness::prepare_data(&cfg, 0).unwrap();
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    io::write_csv_dataset(&train, prepared.train.observed(), false).unwrap();
    io::write_csv_dataset(&test, &prepared.test, false).unwrap();
    let mut file_cfg = cfg.clone();
    file_cfg.dataset = DatasetConfig::Csv { train, test, header: false, num_classes: None };
    let a = harness::run_experiment(&cfg).unwrap();
    let b = harness::run_experiment(&file_cfg).unwrap();
    assert_eq!(a[0].test_accuracy, b[0].test_accuracy);
}

#[test]
fn config_files_load_with_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("exp.toml");
    std::fs::write(&p, small(vec![Method::Random], vec![0]).to_toml_string()).unwrap();
    let cfg = ExperimentConfig::load(&p).unwrap();
    assert_eq!(cfg.methods, vec![Method::Random]);
    assert!(ExperimentConfig::load(Path::new("/definitely/missing.toml")).is_err());
}
