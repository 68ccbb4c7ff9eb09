//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use dris::config::{ExperimentConfig, Method, NoiseConfig, NoiseKind};
use dris::core::certify::{self, PlantedEnsemble, PlantedModel, TheoremParams};
use dris::core::learners::{ModelKind, ModelSpec, TrainedModel};
use dris::core::sampler;
use dris::core::scores::{ScoreKind, ScoreVector};
use dris::core::{rng, Matrix};
use dris::harness::{self, MetricsRow, METRICS_COLUMNS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

// 1: desk-scale synthetic experiment

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let run = |noise: NoiseConfig| -> BTreeMap<String, Vec<f64>> {
        let mut cfg = ExperimentConfig::synthetic_benchmark(vec![Method::UniformSgd, Method::DrisStatic], seeds.clone());
        cfg.noise = noise;
        let mut by = BTreeMap::new();
        for m in harness::run_experiment(&cfg).expect("benchmark runs") {
            by.entry(m.method.to_string()).or_insert_with(Vec::new).push(m.test_accuracy);
        }
        by
    };
    let clean = run(NoiseConfig::default());
    let noisy = run(NoiseConfig { kind: NoiseKind::Uniform, rate: 0.1 });
    let secs = start.elapsed().as_secs_f64();
    let (u0, d0) = (mean(&clean["uniform-sgd"]), mean(&clean["dris-static"]));
    let (u1, d1) = (mean(&noisy["uniform-sgd"]), mean(&noisy["dris-static"]));
    let checks = [
        (94.0..=97.5).contains(&u0),
        (93.0..=96.5).contains(&d0),
        d1 <= 60.0,
        u1 >= 82.0,
        u1 - d1 >= 20.0,
        secs < 600.0,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "clean uniform {u0:.2}±{:.2} [94,97.5] {}, clean DR-IS {d0:.2}±{:.2} [93,96.5] {}; \
             10% noise uniform {u1:.2} (>=82) {}, DR-IS {d1:.2} (<=60) {}, gap {:.2} pp (>=20) {}; {secs:.1}s (<600) {}",
            sample_sd(&clean["uniform-sgd"]),
            mark(checks[0]),
            sample_sd(&clean["dris-static"]),
            mark(checks[1]),
            mark(checks[3]),
            mark(checks[2]),
            u1 - d1,
            mark(checks[4]),
            mark(checks[5]),
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISS"
    }
}

// 2: planted-rank certificate suite

/// Sets `K` to the smallest value that separates.
fn conforming(p: TheoremParams, n_bdry: usize) -> PlantedModel {
    let mut params = TheoremParams { alpha_trim: 0.25, v_tail: 0.04, ..p };
    params.k = certify::min_k_for_separation(&params).expect("separable parameters");
    PlantedModel { params, n_bdry }
}

fn criterion_2() -> Outcome {
    let trials = 1000;
    let models = [
        conforming(TheoremParams { n: 400, delta: 0.1, tau: 0.1, gamma: 0.01, tau_bdry: 0.45, epsilon: 0.2, alpha: 0.25, ..Default::default() }, 150),
        conforming(TheoremParams { n: 300, delta: 0.2, tau: 0.05, gamma: 0.0, tau_bdry: 0.5, epsilon: 0.3, alpha: 0.2, ..Default::default() }, 90),
        conforming(TheoremParams { n: 500, delta: 0.05, tau: 0.2, gamma: 0.02, tau_bdry: 0.45, epsilon: 0.1, alpha: 0.3, ..Default::default() }, 200),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let p = &m.params;
        let s = certify::planted_rank_montecarlo(m, trials, 100 + i as u64).expect("planted model");
        assert!(s.report.subset_certified, "model {i} is not conforming");
        let limit = p.delta + 3.0 * (p.delta * (1.0 - p.delta) / trials as f64).sqrt();
        let rate = s.joint_violation_rate();
        let ok = rate <= limit && s.bulk_in_subset_trials == 0 && s.cap_exceeded_trials == 0;
        pass &= ok;
        parts.push(format!(
            "K={} N={}: violations {rate:.3} (<= {limit:.3}), bulk-in-subset {}, over-cap {} (max {:.4} vs cap {:.4}) {}",
            p.k,
            p.n,
            s.bulk_in_subset_trials,
            s.cap_exceeded_trials,
            s.max_contamination,
            s.report.contamination_cap,
            mark(ok)
        ));
    }
    outcome(pass, parts.join("; "))
}

// 3: magnitude mass bounds

fn criterion_3() -> Outcome {
    let mut r = rng::stream(3, "mass-bounds");
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..10_000 {
        let n = r.random_range(2..60);
        let eps: f64 = r.random_range(0.01..0.5);
        let n_corr = ((eps * n as f64).round() as usize).clamp(1, n - 1);
        let mut mask = vec![false; n];
        for m in mask.iter_mut().take(n_corr) {
            *m = true;
        }
        let scores: Vec<f64> = (0..n).map(|_| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..10.0) }).collect();
        if scores.iter().all(|&s| s == 0.0) {
            continue;
        }
        let b = certify::magnitude_mass_bounds(&scores, &mask).expect("valid instance");
        // direct oracle for the measured mass
        let total: f64 = scores.iter().sum();
        let corr: f64 = scores[..n_corr].iter().sum();
        let direct = corr / total;
        let e = n_corr as f64 / n as f64;
        let smin = scores[..n_corr].iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = scores.iter().cloned().fold(0.0, f64::max);
        let clean_mean = scores[n_corr..].iter().sum::<f64>() / (n - n_corr) as f64;
        let lb1 = e * smin / smax;
        let ok_mass = (b.corrupted_mass - direct).abs() <= 1e-12 && direct >= lb1 * (1.0 - 1e-12);
        let ok_ratio = clean_mean == 0.0 || corr / (total - corr) >= e / (1.0 - e) * smin / clean_mean * (1.0 - 1e-12);
        if !(b.holds() && ok_mass && ok_ratio) {
            failures += 1;
        }
        worst = worst.min(direct - lb1);
    }
    let equal = certify::magnitude_mass_bounds(&[2.0; 10], &[true, true, true, false, false, false, false, false, false, false]).expect("equal scores");
    let tight = (equal.corrupted_mass - equal.lower_bound).abs() < 1e-15 && (equal.ratio - equal.ratio_lower).abs() < 1e-15 && (equal.corrupted_mass - 0.3).abs() < 1e-15;
    outcome(
        failures == 0 && tight,
        format!("10000 instances, {failures} violations, min slack {worst:.3e}; equal scores give mass {:.3} = bound {:.3} {}", equal.corrupted_mass, equal.lower_bound, mark(tight)),
    )
}

// 4: exact unbiasedness of online plans

fn criterion_4() -> Outcome {
    let mut r = rng::stream(4, "unbiased");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..200);
        let s: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0) * r.random_range(0.0..5.0)).collect();
        let xi = r.random_range(0.0..1.0);
        let plan = match sampler::online_distribution(&ScoreVector::new(s.clone(), ScoreKind::RankVariance).unwrap(), xi) {
            Ok(p) => p,
            // all-zero scores with xi = 0 are rejected; resample
            Err(_) => sampler::online_distribution(&ScoreVector::new(vec![1.0; n], ScoreKind::RankVariance).unwrap(), xi).unwrap(),
        };
        let (p, w) = (plan.probs().unwrap(), plan.weights().unwrap());
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let lhs: f64 = (0..n).map(|i| p[i] * w[i] * v[i]).sum();
        let rhs = v.iter().sum::<f64>() / n as f64;
        let scale = v.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
    }
    outcome(worst <= 1e-12, format!("100 plans, max relative error {worst:.2e} (<= 1e-12)"))
}

// 5: bounded differences on a rank grid

fn biased_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn criterion_5() -> Outcome {
    let steps = 10;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 2..=4usize {
        let bound = (k - 1) as f64 / (k * k) as f64;
        let total = grid.len().pow(k as u32);
        let mut worst: f64 = 0.0;
        let mut rows = Vec::with_capacity(total);
        for code in 0..total {
            let mut c = code;
            let row: Vec<f64> = (0..k)
                .map(|_| {
                    let g = grid[c % grid.len()];
                    c /= grid.len();
                    g
                })
                .collect();
            rows.push(row);
        }
        // the library's row variances must agree with the direct formula
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        let lib = certify::row_variances(&Matrix::from_vec(total, k, flat).unwrap());
        let lib_ok = rows.iter().zip(&lib).all(|(row, v)| (biased_var(row) - v).abs() < 1e-14);
        for (row, &base) in rows.iter().zip(&lib) {
            for j in 0..k {
                for &g in &grid {
                    let mut alt = row.clone();
                    alt[j] = g;
                    worst = worst.max((biased_var(&alt) - base).abs());
                }
            }
        }
        let ok = lib_ok && worst <= bound + 1e-15 && (k != 2 || (worst - bound).abs() < 1e-15);
        pass &= ok;
        parts.push(format!("K={k}: max change {worst:.6} vs bound {bound:.6} {}", mark(ok)));
    }
    outcome(pass, parts.join("; "))
}

// 6: sample-variance identity

fn criterion_6() -> Outcome {
    type Law = (&'static str, f64, fn(&mut rng::Stream) -> f64);
    let laws: [Law; 3] = [
        ("uniform", 1.0 / 12.0, |r| r.random::<f64>()),
        ("two-point 0.5±0.3", 0.09, |r| if r.random::<bool>() { 0.8 } else { 0.2 }),
        ("triangular", 1.0 / 24.0, |r| (r.random::<f64>() + r.random::<f64>()) / 2.0),
    ];
    let reps = 20_000;
    let mut pass = true;
    let mut worst_z: f64 = 0.0;
    for (li, (_, var, draw)) in laws.iter().enumerate() {
        for k in [2usize, 4, 16] {
            let mut r = rng::substream(6, "law", (li * 100 + k) as u64);
            let data: Vec<f64> = (0..reps * k).map(|_| draw(&mut r)).collect();
            let v = certify::row_variances(&Matrix::from_vec(reps, k, data).unwrap());
            let m = mean(&v);
            let se = sample_sd(&v) / (reps as f64).sqrt();
            let z = (m - (1.0 - 1.0 / k as f64) * var).abs() / se;
            worst_z = worst_z.max(z);
            pass &= z <= 3.0;
        }
    }
    outcome(pass, format!("3 laws x K in {{2,4,16}}, {reps} draws each, max |z| {worst_z:.2} (<= 3)"))
}

// 7: analytic gradients against central differences

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [ModelKind::LinearSoftmax, ModelKind::LinearSquaredHinge, ModelKind::Mlp1Hidden] {
        let spec = match kind {
            ModelKind::Mlp1Hidden => ModelSpec::mlp(5, 3, 6, 0.1),
            _ => ModelSpec::linear(kind, 5, 3, 0.1),
        };
        let mut r = rng::stream(7, kind.name());
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let params: Vec<f64> = (0..spec.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
            let m = TrainedModel::from_params(spec.clone(), params.clone()).unwrap();
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            let y = r.random_range(0..3);
            let mut g = vec![0.0; m.num_params()];
            m.sample_gradient(&x, y, &mut g);
            let h = 1e-6;
            for (j, &gj) in g.iter().enumerate() {
                let at = |d: f64| {
                    let mut p = params.clone();
                    p[j] += d;
                    TrainedModel::from_params(spec.clone(), p).unwrap().objective_loss(&x, y)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                worst = worst.max((gj - fd).abs() / gj.abs().max(fd.abs()).max(1e-3));
            }
        }
        pass &= worst < 1e-5;
        parts.push(format!("{} {worst:.1e}", kind.name()));
    }
    outcome(pass, format!("max relative error (< 1e-5): {}", parts.join(", ")))
}

// 8: AUROC bound dominance

fn criterion_8() -> Outcome {
    let triples = [(1.0, 0.5, 0.3), (0.5, 0.5, 0.5), (2.0, 1.0, 0.5), (0.3, 0.2, 0.1), (1.5, 0.4, 1.0)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &(d, s, nu)) in triples.iter().enumerate() {
        let est = certify::simulate_aum_auroc(d, s, nu, 100_000, 80 + i as u64).unwrap();
        let bound = certify::aum_auroc_bound(d, s, nu).unwrap();
        let ok = est.probability >= bound - 3.0 * est.std_error;
        pass &= ok;
        parts.push(format!("({d},{s},{nu}) {:.4} >= {bound:.4}", est.probability));
    }
    outcome(pass, parts.join("; "))
}

// 9: K-ablation shape on the planted ensemble

fn criterion_9() -> Outcome {
    let ks = [2, 4, 8, 16, 32];
    let rows = harness::k_ablation(&PlantedEnsemble::default(), &ks, 9, 50).unwrap();
    let gaps_ok = rows.iter().all(|r| r.empirical_gap > 0.0);
    let at8 = rows.iter().find(|r| r.k == 8).and_then(|r| r.corrupt_below_clean_median).unwrap_or(0.0);
    let gaps: Vec<String> = rows.iter().map(|r| format!("K={} {:.4}", r.k, r.empirical_gap)).collect();
    outcome(
        gaps_ok && at8 >= 0.9,
        format!("gap > 0: {} {}; corrupt below clean median at K=8 {:.1}% (>= 90%)", gaps.join(", "), mark(gaps_ok), 100.0 * at8),
    )
}

// 10: CLI sweep and report

fn cli(args: &[&str]) -> i32 {
    dris::cli::main_from(std::iter::once("dris").chain(args.iter().copied()))
}

fn read_summary(path: &Path) -> Vec<csv::StringRecord> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes()).records().map(|r| r.unwrap()).collect()
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::synthetic_benchmark(vec![Method::UniformSgd, Method::Random, Method::DrisStatic], (0..5).collect());
    let cfg_path = dir.path().join("benchmark.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).unwrap();
    let out = dir.path().join("sweep");
    let code = cli(&["sweep", "--config", cfg_path.to_str().unwrap(), "--axis", "eps", "--values", "0,0.1,0.25", "--out-dir", out.to_str().unwrap()]);
    let metrics = out.join("metrics.csv");
    let header_ok = csv::Reader::from_path(&metrics)
        .and_then(|mut r| r.headers().cloned())
        .map(|h| h.iter().eq(METRICS_COLUMNS.iter().copied()))
        .unwrap_or(false);
    let rows: Vec<MetricsRow> = match harness::read_metrics(&metrics) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("metrics.csv unreadable: {e}")),
    };
    let schema_ok = code == 0 && header_ok && rows.len() == 45 && rows.iter().all(MetricsRow::is_ok);

    let summary = dir.path().join("summary.csv");
    let rep_code = cli(&["report", metrics.to_str().unwrap(), "--out", summary.to_str().unwrap()]);
    let mut report_ok = rep_code == 0;
    let recs = read_summary(&summary);
    let mut worst_dev: f64 = 0.0;
    for eps in ["0", "0.1", "0.25"] {
        for m in ["uniform-sgd", "random", "dris-static"] {
            let acc: Vec<f64> = rows.iter().filter(|r| r.value == eps && r.method == m).filter_map(|r| r.test_accuracy).collect();
            let rec = recs.iter().find(|r| &r[4] == eps && &r[5] == m);
            match rec {
                Some(rec) => {
                    let (rm, rs): (f64, f64) = (rec[7].parse().unwrap(), rec[8].parse().unwrap());
                    worst_dev = worst_dev.max((rm - mean(&acc)).abs()).max((rs - sample_sd(&acc)).abs());
                    report_ok &= &rec[6] == "5";
                }
                None => report_ok = false,
            }
        }
    }
    report_ok &= worst_dev < 1e-9;

    let m = (cfg.alpha * 2000.0).floor();
    let mut worst_z: f64 = 0.0;
    let mut binom_ok = true;
    for r in rows.iter().filter(|r| r.method == "random") {
        let eps: f64 = r.value.parse().unwrap();
        let frac = r.frac_corrupt_in_subset.unwrap_or(f64::NAN);
        let sd = (eps * (1.0 - eps) / m).sqrt();
        let ok = if sd == 0.0 { frac == 0.0 } else { (frac - eps).abs() <= 3.0 * sd };
        binom_ok &= ok;
        if sd > 0.0 {
            worst_z = worst_z.max((frac - eps).abs() / sd);
        }
    }
    outcome(
        schema_ok && report_ok && binom_ok,
        format!(
            "sweep exit {code}, {} rows, header {} {}; report exit {rep_code}, max mean/std deviation {worst_dev:.1e} {}; random frac max |z| {worst_z:.2} (<= 3) {}",
            rows.len(),
            mark(header_ok),
            mark(schema_ok),
            mark(report_ok),
            mark(binom_ok)
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("synthetic reproduction", criterion_1),
        ("planted-rank certificate", criterion_2),
        ("magnitude mass bounds", criterion_3),
        ("exact unbiasedness", criterion_4),
        ("bounded differences", criterion_5),
        ("sample-variance identity", criterion_6),
        ("gradient correctness", criterion_7),
        ("AUROC bound dominance", criterion_8),
        ("K-ablation shape", criterion_9),
        ("end-to-end CLI", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += usize::from(!o.pass);
        println!("{} criterion {} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
