//! Monte-Carlo and statistical oracles for the samplers, learners and
//! planted-rank estimators.

use dris_core::certify::{self, PlantedEnsemble, PlantedModel, TheoremParams};
use dris_core::data::Observed;
use dris_core::learners::{self, ModelKind, ModelSpec, TrainedModel};
use dris_core::rng;
use dris_core::sampler;
use dris_core::scores::{self, RankMatrix, ScoreKind, ScoreVector};
use dris_core::Matrix;
use rand::Rng;

/// Upper 1% point of the chi-square distribution with 9 degrees of freedom.
const CHI2_9DF_P01: f64 = 21.666;

#[test]
fn uniform_plan_draws_pass_chi_square() {
    let plan = sampler::online_distribution(&ScoreVector::new(vec![0.2; 10], ScoreKind::RankVariance).unwrap(), 0.1).unwrap();
    let mut r = rng::stream(11, "chi2");
    let mut counts = [0usize; 10];
    for _ in 0..10_000 {
        for i in sampler::weighted_epoch_indices(&plan, &mut r).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = 10_000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_9DF_P01, "chi2 = {chi2}");
}

#[test]
fn dominant_index_frequency_is_binomial() {
    let plan = sampler::from_masses(&[0.999, 0.001], 0.0).unwrap();
    let mut r = rng::stream(12, "binomial");
    let draws = 100_000usize;
    let mut hits = 0usize;
    for _ in 0..draws / 2 {
        hits += sampler::weighted_epoch_indices(&plan, &mut r).unwrap().iter().filter(|&&i| i == 0).count();
    }
    let p = 0.999;
    let sd = (p * (1.0 - p) / draws as f64).sqrt();
    let freq = hits as f64 / draws as f64;
    assert!((freq - p).abs() <= 3.0 * sd, "{freq}");
}

#[test]
fn constant_model_on_random_labels_is_at_chance() {
    let n = 10_000;
    let mut r = rng::stream(5, "labels");
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    let data = Observed::new(Matrix::from_vec(n, 1, x).unwrap(), y, 2).unwrap();
    let spec = ModelSpec::linear(ModelKind::LinearSoftmax, 1, 2, 0.0);
    let model = TrainedModel::from_params(spec, vec![0.0; 4]).unwrap();
    let acc = learners::accuracy(&model, &data, None).unwrap();
    assert!((acc - 0.5).abs() <= 0.02, "{acc}");
}

#[test]
fn planted_tau_is_recovered() {
    let params = TheoremParams { n: 5000, k: 32, tau: 0.1, gamma: 0.05, epsilon: 0.2, alpha_trim: 0.0, tau_bdry: 0.4, ..TheoremParams::default() };
    let model = PlantedModel { params, n_bdry: 1000 };
    let ranks = model.sample_ranks(&mut rng::stream(3, "planted"));
    // planted draws may touch 0; ranks live in (0, 1]
    let ranks = Matrix::from_vec(5000, 32, ranks.as_slice().iter().map(|r| r.max(1e-12)).collect()).unwrap();
    let rm = RankMatrix::new(ranks, (0..32).map(|j| j.to_string()).collect(), 0).unwrap();
    let roles = model.roles();
    let corrupt: Vec<bool> = (0..5000).map(|i| i < model.n_corrupt()).collect();
    let bdry: Vec<bool> = roles.iter().map(|r| *r == certify::PlantedRole::Boundary).collect();
    let est = certify::estimate_assumption_params(&rm, &corrupt, &bdry, 0.0, 0.05).unwrap();
    assert!((est.tau - 0.1).abs() <= 0.02, "{}", est.tau);
    assert!((est.tau_bdry_sq - 0.16).abs() <= 0.02, "{}", est.tau_bdry_sq);
    assert!(est.empirical_gap > 0.0);
}

#[test]
fn pinned_corrupt_ranks_give_zero_tau_and_gamma() {
    let n = 20;
    let mut data = Vec::new();
    for i in 0..n {
        for j in 0..4 {
            data.push(if i < 5 { 1.0 } else { ((i * 4 + j) % 19 + 1) as f64 / 20.0 });
        }
    }
    let rm = RankMatrix::new(Matrix::from_vec(n, 4, data).unwrap(), (0..4).map(|j| j.to_string()).collect(), 0).unwrap();
    let corrupt: Vec<bool> = (0..n).map(|i| i < 5).collect();
    let bdry: Vec<bool> = (0..n).map(|i| i >= 5).collect();
    let est = certify::estimate_assumption_params(&rm, &corrupt, &bdry, 0.0, 0.05).unwrap();
    assert_eq!(est.tau, 0.0);
    assert_eq!(est.gamma, 0.0);
}

#[test]
fn planted_ensemble_gap_is_positive() {
    let pe = PlantedEnsemble::default();
    for k in [2, 4, 8] {
        let d = pe.sample(k, 9).unwrap();
        let est = certify::estimate_assumption_params(&d.ranks, &d.corrupt_mask, &d.bdry_mask, 0.1, 0.05).unwrap();
        assert!(est.empirical_gap > 0.0, "K={k}: {}", est.empirical_gap);
    }
}

#[test]
fn two_point_boundary_variance_matches_expectation() {
    let params = TheoremParams { n: 200, k: 8, tau_bdry: 0.3, epsilon: 0.25, ..TheoremParams::default() };
    let model = PlantedModel { params, n_bdry: 60 };
    let s = certify::planted_rank_montecarlo(&model, 200, 4).unwrap();
    let want = (1.0 - 1.0 / 8.0) * 0.09;
    assert!((s.mean_bdry_variance - want).abs() <= 3.0 * s.bdry_variance_std_error, "{} vs {want}", s.mean_bdry_variance);
}

#[test]
fn bulk_bound_holds_when_gamma_is_one() {
    let params = TheoremParams { n: 100, k: 4, gamma: 1.0, tau: 0.5, epsilon: 0.3, tau_bdry: 0.2, ..TheoremParams::default() };
    let model = PlantedModel { params, n_bdry: 20 };
    let s = certify::planted_rank_montecarlo(&model, 100, 8).unwrap();
    assert_eq!(s.bulk_violations, 0);
}

#[test]
fn consensus_flags_pinned_rows_first() {
    let rm = RankMatrix::new(
        Matrix::from_vec(3, 3, vec![1.0, 1.0, 1.0, 0.2, 0.6, 0.4, 0.5, 0.5, 0.5]).unwrap(),
        vec!["a".into(), "b".into(), "c".into()],
        0,
    )
    .unwrap();
    let c = scores::consensus_mean_rank(&rm).unwrap();
    let plan = sampler::select_top_alpha(&c, 0.34).unwrap();
    assert_eq!(plan.kept_indices().unwrap(), &[0]);
}
