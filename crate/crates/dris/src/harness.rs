//! Experiment orchestration: proxy phase, scoring, selection, target
//! training, metrics and sweeps.
//!
//! Only [`prepare_data`] and the metric code touch the ground truth. Proxies,
//! scores and plans are built from an [`Observed`] dataset, which carries no
//! corruption mask or clean labels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use dris_core::certify::{self, CertificateReport, PlantedEnsemble};
use dris_core::data::{self, LabeledDataset, Observed};
use dris_core::learners::{self, EpochReport, PerSampleStats, Shuffle, TrainConfig, TrainedModel};
use dris_core::sampler::{self, SamplingPlan};
use dris_core::scores::{self, RankMatrix, ScoreKind, ScoreVector};
use dris_core::{rng, stats, Matrix};

use crate::config::{DatasetConfig, ExperimentConfig, Method, NoiseKind, ProxyConfig, TargetConfig};
use crate::error::{Error, Result};
use crate::io::{self, csv_err};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Column order of `metrics.csv`. Changing it requires bumping
/// [`METRICS_SCHEMA_VERSION`].
pub const METRICS_COLUMNS: [&str; 21] = [
    "schema_version",
    "experiment",
    "axis",
    "value",
    "seed",
    "method",
    "noise",
    "rate",
    "k",
    "alpha",
    "status",
    "test_accuracy",
    "frac_corrupt_in_subset",
    "subset_size",
    "empirical_gap",
    "corrupt_below_clean_p10",
    "corrupt_below_clean_median",
    "per_proxy_corr_train_acc",
    "mask_hash",
    "wall_seconds",
    "error",
];

/// Upper end of the histogram range; no variance of values in `(0, 1]`
/// exceeds it.
pub const MAX_RANK_VARIANCE: f64 = 0.25;

// ---------------------------------------------------------------- data

pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: Observed,
}

/// Loads or generates the training and test sets for one seed and injects
/// the configured label noise into the training set.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let (clean, test) = match &cfg.dataset {
        DatasetConfig::Synthetic { n, test_n, seed: fixed, .. } => {
            let base = fixed.unwrap_or_else(|| rng::derive_seed(seed, "dataset"));
            let train_spec = cfg.dataset.synthetic_spec(Some(*n), base).expect("synthetic");
            let test_spec = cfg
                .dataset
                .synthetic_spec(Some(*test_n), rng::derive_seed(base, "test"))
                .expect("synthetic");
            let train = data::generate_synthetic(&train_spec)?;
            let test = data::generate_synthetic(&test_spec)?.observed().clone();
            (train, test)
        }
        DatasetConfig::Csv { train, test, header, num_classes } => {
            let tr = io::read_csv_dataset(train, *header, *num_classes)?;
            let te = io::read_csv_dataset(test, *header, Some(tr.num_classes()))?;
            (into_labeled(tr)?, te)
        }
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
            let tr = io::read_idx_pair(train_images, train_labels)?;
            let te = io::read_idx_pair(test_images, test_labels)?;
            let c = tr.num_classes().max(te.num_classes());
            let tr = Observed::new(tr.features().clone(), tr.labels().to_vec(), c)?;
            let te = Observed::new(te.features().clone(), te.labels().to_vec(), c)?;
            (into_labeled(tr)?, te)
        }
    };
    if test.dim() != clean.observed().dim() {
        return Err(Error::Config(format!(
            "test features have dimension {}, training features {}",
            test.dim(),
            clean.observed().dim()
        )));
    }
    let train = corrupt(cfg, &clean, seed)?;
    Ok(PreparedData { train, test })
}

fn into_labeled(o: Observed) -> Result<LabeledDataset> {
    let c = o.num_classes();
    let labels = o.labels().to_vec();
    Ok(LabeledDataset::new(o.features().clone(), labels, c)?)
}

/// Applies the configured noise with the seed-derived noise stream. The
/// targeted attacker is the target architecture trained on clean labels.
pub fn corrupt(cfg: &ExperimentConfig, clean: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let noise_seed = rng::derive_seed(seed, "noise");
    match cfg.noise.kind {
        NoiseKind::None => Ok(clean.clone()),
        NoiseKind::Uniform => Ok(data::inject_uniform_noise(clean, cfg.noise.rate, noise_seed)?),
        NoiseKind::Targeted => {
            let spec = cfg.target.model.spec(clean.observed().dim(), clean.num_classes());
            let train_cfg = TrainConfig {
                seed: rng::derive_seed(seed, "attacker"),
                ..cfg.target.train.clone()
            };
            let attacker = learners::train(&spec, &train_cfg, &clean.clean_observed())?;
            Ok(data::inject_targeted_noise(clean, cfg.noise.rate, &attacker, noise_seed)?)
        }
    }
}

// ---------------------------------------------------------------- proxies

/// Everything the scoring functions need from one proxy training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyRun {
    pub id: String,
    pub snapshot_model: TrainedModel,
    pub snapshot_stats: PerSampleStats,
    /// `N x T` correctness against the observed labels, one column per epoch.
    pub correct: Matrix<bool>,
    /// `N x T` margins against the observed labels.
    pub margins: Matrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyEnsemble {
    pub snapshot_epoch: usize,
    pub runs: Vec<ProxyRun>,
}

/// Trains the `K` proxies concurrently; proxy `k` uses the seed derived
/// from label `proxy/k`.
pub fn train_proxies(data: &Observed, cfg: &ProxyConfig, seed: u64) -> Result<ProxyEnsemble> {
    let snapshot = cfg.snapshot();
    if snapshot == 0 || snapshot > cfg.train.epochs {
        return Err(Error::Config("snapshot epoch outside the proxy training run".into()));
    }
    let spec = cfg.model.spec(data.dim(), data.num_classes());
    let runs = (0..cfg.k)
        .into_par_iter()
        .map(|k| {
            let train_cfg = TrainConfig {
                seed: rng::derive_seed(seed, &format!("proxy/{k}")),
                ..cfg.train.clone()
            };
            let mut correct = Vec::with_capacity(train_cfg.epochs);
            let mut margins = Vec::with_capacity(train_cfg.epochs);
            let mut snap = None;
            let mut hook = |r: EpochReport<'_>| {
                correct.push(r.stats.correct.clone());
                margins.push(r.stats.margin.clone());
                if r.epoch == snapshot {
                    snap = Some((r.model.clone(), r.stats.clone()));
                }
            };
            learners::train_with(&spec, &train_cfg, data, &Shuffle, Some(&mut hook))?;
            let (snapshot_model, snapshot_stats) = snap.expect("snapshot epoch reached");
            Ok(ProxyRun {
                id: format!("proxy-{k}"),
                snapshot_model,
                snapshot_stats,
                correct: Matrix::from_columns(&correct)?,
                margins: Matrix::from_columns(&margins)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProxyEnsemble { snapshot_epoch: snapshot, runs })
}

impl ProxyEnsemble {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn rank_matrix(&self) -> Result<RankMatrix> {
        let losses: Vec<Vec<f64>> = self.runs.iter().map(|r| r.snapshot_stats.loss.clone()).collect();
        let ids = self.runs.iter().map(|r| r.id.clone()).collect();
        Ok(RankMatrix::from_losses(&losses, ids, self.snapshot_epoch)?)
    }

    pub fn snapshot_models(&self) -> Vec<TrainedModel> {
        self.runs.iter().map(|r| r.snapshot_model.clone()).collect()
    }

    fn mean_of(&self, pick: impl Fn(&PerSampleStats) -> &Vec<f64>, kind: ScoreKind) -> Result<ScoreVector> {
        let per: Vec<ScoreVector> = self
            .runs
            .iter()
            .map(|r| ScoreVector::new(pick(&r.snapshot_stats).clone(), kind))
            .collect::<dris_core::Result<_>>()?;
        Ok(scores::ensemble_mean(&per)?.relabel(kind))
    }

    pub fn mean_grad_norms(&self) -> Result<ScoreVector> {
        self.mean_of(|s| &s.grad_norm, ScoreKind::GradNorm)
    }

    pub fn mean_losses(&self) -> Result<ScoreVector> {
        self.mean_of(|s| &s.loss, ScoreKind::Loss)
    }

    pub fn mean_margins(&self) -> Result<Vec<f64>> {
        let v = self.mean_of(|s| &s.margin, ScoreKind::Loss)?;
        Ok(v.into_values())
    }
}

// ---------------------------------------------------------------- scoring and plans

/// Importance scores for an online method or ranking scores for a static one.
pub fn method_scores(method: Method, ens: &ProxyEnsemble, data: &Observed) -> Result<ScoreVector> {
    let rv = || -> Result<ScoreVector> { Ok(scores::rank_variance(&ens.rank_matrix()?)?) };
    Ok(match method {
        Method::DrisStatic | Method::DrisOnline => rv()?,
        Method::El2n => scores::el2n(&ens.snapshot_models(), data)?,
        Method::Consensus => scores::consensus_mean_rank(&ens.rank_matrix()?)?,
        Method::Forgetting => {
            let t: Vec<Matrix<bool>> = ens.runs.iter().map(|r| r.correct.clone()).collect();
            scores::forgetting_events(&t)?
        }
        // a single training run, as in the original AUM recipe
        Method::Aum => scores::aum(&ens.runs[0].margins)?,
        Method::GradNormIs => ens.mean_grad_norms()?,
        Method::LossIs => ens.mean_losses()?,
        Method::Hybrid(beta) => scores::hybrid(&ens.mean_grad_norms()?, &rv()?, beta)?,
        Method::UniformMix(k) => sampler::uniform_mix(&rv()?, k)?,
        Method::Random | Method::UniformSgd => {
            return Err(Error::Config(format!("{method} does not use scores")));
        }
    })
}

/// Builds the sampling plan of `method`; `None` means plain uniform SGD.
pub fn method_plan(
    method: Method,
    ens: Option<&ProxyEnsemble>,
    data: &Observed,
    alpha: f64,
    xi: f64,
    seed: u64,
) -> Result<Option<SamplingPlan>> {
    let n = data.len();
    let plan = match method {
        Method::UniformSgd => return Ok(None),
        Method::Random => {
            let m = dris_core::math::floor_count(alpha, n);
            let mut kept = index::sample(&mut rng::stream(seed, "random-subset"), n, m).into_vec();
            kept.sort_unstable();
            SamplingPlan::Static { alpha, n, kept_indices: kept }
        }
        _ => {
            let ens = ens.ok_or_else(|| Error::Config(format!("{method} needs a proxy ensemble")))?;
            let s = method_scores(method, ens, data)?;
            match method {
                Method::UniformMix(_) => sampler::from_masses(s.values(), xi)?,
                m if m.is_static() => sampler::select_top_alpha(&s, alpha)?,
                _ => sampler::online_distribution(&s, xi)?,
            }
        }
    };
    if plan.kept_indices().is_some_and(|k| k.is_empty()) {
        return Err(Error::Config(format!("alpha = {alpha} keeps no examples out of {n}")));
    }
    Ok(Some(plan))
}

/// Trains the target. Static plans get `floor(E / alpha)` epochs over their
/// subset, online plans and uniform SGD the configured `E` full epochs.
pub fn train_target(cfg: &TargetConfig, data: &Observed, plan: Option<&SamplingPlan>, seed: u64) -> Result<TrainedModel> {
    let spec = cfg.model.spec(data.dim(), data.num_classes());
    let mut train_cfg = TrainConfig {
        seed: rng::derive_seed(seed, "target"),
        ..cfg.train.clone()
    };
    match plan {
        None => Ok(learners::train_with(&spec, &train_cfg, data, &Shuffle, None)?),
        Some(p) => {
            if let SamplingPlan::Static { alpha, .. } = p {
                train_cfg.epochs = sampler::step_parity_epochs(train_cfg.epochs, *alpha)?;
            }
            Ok(learners::train_with(&spec, &train_cfg, data, p, None)?)
        }
    }
}

/// Fraction of the kept subset that is corrupted for static plans, expected
/// corrupted mass `sum q_i` for online plans, and the corruption rate for
/// uniform SGD.
pub fn frac_corrupt(plan: Option<&SamplingPlan>, mask: &[bool]) -> f64 {
    match plan {
        None => mask.iter().filter(|&&c| c).count() as f64 / mask.len().max(1) as f64,
        Some(SamplingPlan::Static { kept_indices, .. }) => {
            if kept_indices.is_empty() {
                return 0.0;
            }
            kept_indices.iter().filter(|&&i| mask[i]).count() as f64 / kept_indices.len() as f64
        }
        Some(SamplingPlan::Online { probs, .. }) => {
            probs.iter().zip(mask).filter(|(_, &c)| c).fold(0.0, |a, (p, _)| a + p).min(1.0)
        }
    }
}

// ---------------------------------------------------------------- histogram

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub clean: Vec<usize>,
    pub corrupt: Vec<usize>,
    /// Fraction of corrupted examples scoring below the clean 10th percentile.
    pub corrupt_below_clean_p10: Option<f64>,
    /// Fraction of corrupted examples scoring below the clean median.
    pub corrupt_below_clean_median: Option<f64>,
}

/// Bins rank variances over `[0, 0.25]`, split by the corruption mask.
pub fn histogram(values: &[f64], corrupt_mask: &[bool], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Config("histogram needs at least two bins".into()));
    }
    if values.len() != corrupt_mask.len() {
        return Err(dris_core::Error::Dimension { what: "corrupt mask", expected: values.len(), found: corrupt_mask.len() }.into());
    }
    let width = MAX_RANK_VARIANCE / bins as f64;
    let edges = (0..=bins).map(|b| b as f64 * width).collect();
    let mut clean = vec![0; bins];
    let mut corrupt = vec![0; bins];
    for (&v, &c) in values.iter().zip(corrupt_mask) {
        let b = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        if c {
            corrupt[b] += 1;
        } else {
            clean[b] += 1;
        }
    }
    let clean_v = stats::select(values, corrupt_mask, false);
    let corr_v = stats::select(values, corrupt_mask, true);
    let below = |q: f64| -> Option<f64> {
        if corr_v.is_empty() || clean_v.is_empty() {
            return None;
        }
        let cut = stats::quantile(&clean_v, q).ok()?;
        Some(corr_v.iter().filter(|&&v| v < cut).count() as f64 / corr_v.len() as f64)
    };
    Ok(Histogram {
        edges,
        clean,
        corrupt,
        corrupt_below_clean_p10: below(0.1),
        corrupt_below_clean_median: below(0.5),
    })
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["bin_lo", "bin_hi", "clean", "corrupt"]).map_err(|e| csv_err(path, e))?;
    for b in 0..h.clean.len() {
        w.write_record([
            h.edges[b].to_string(),
            h.edges[b + 1].to_string(),
            h.clean[b].to_string(),
            h.corrupt[b].to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- metrics

/// One row of `metrics.csv`. Accuracy is in percent, fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema_version: u32,
    pub experiment: String,
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub method: String,
    pub noise: String,
    pub rate: f64,
    pub k: usize,
    pub alpha: f64,
    pub status: String,
    pub test_accuracy: Option<f64>,
    pub frac_corrupt_in_subset: Option<f64>,
    pub subset_size: Option<usize>,
    pub empirical_gap: Option<f64>,
    pub corrupt_below_clean_p10: Option<f64>,
    pub corrupt_below_clean_median: Option<f64>,
    /// Semicolon-separated, one value per proxy.
    pub per_proxy_corr_train_acc: String,
    pub mask_hash: String,
    pub wall_seconds: f64,
    pub error: String,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn per_proxy(&self) -> Vec<f64> {
        self.per_proxy_corr_train_acc
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub method: Method,
    pub test_accuracy: f64,
    pub frac_corrupt_in_subset: f64,
    pub subset_size: usize,
    pub per_proxy_corr_train_acc: Vec<f64>,
    pub empirical_gap: Option<f64>,
    pub histogram: Option<Histogram>,
    pub mask_hash: String,
    pub wall_seconds: f64,
}

/// Sweep coordinates of a cell; empty for a plain run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cell {
    pub axis: String,
    pub value: String,
}

fn row_base(cfg: &ExperimentConfig, cell: &Cell, seed: u64, method: Method) -> MetricsRow {
    MetricsRow {
        schema_version: METRICS_SCHEMA_VERSION,
        experiment: cfg.name.clone(),
        axis: cell.axis.clone(),
        value: cell.value.clone(),
        seed,
        method: method.to_string(),
        noise: cfg.noise.kind.to_string(),
        rate: cfg.noise.rate,
        k: cfg.proxies.k,
        alpha: cfg.alpha,
        status: "ok".into(),
        test_accuracy: None,
        frac_corrupt_in_subset: None,
        subset_size: None,
        empirical_gap: None,
        corrupt_below_clean_p10: None,
        corrupt_below_clean_median: None,
        per_proxy_corr_train_acc: String::new(),
        mask_hash: String::new(),
        wall_seconds: 0.0,
        error: String::new(),
    }
}

impl RunMetrics {
    pub fn to_row(&self, cfg: &ExperimentConfig, cell: &Cell) -> MetricsRow {
        let h = self.histogram.as_ref();
        MetricsRow {
            test_accuracy: Some(self.test_accuracy),
            frac_corrupt_in_subset: Some(self.frac_corrupt_in_subset),
            subset_size: Some(self.subset_size),
            empirical_gap: self.empirical_gap,
            corrupt_below_clean_p10: h.and_then(|h| h.corrupt_below_clean_p10),
            corrupt_below_clean_median: h.and_then(|h| h.corrupt_below_clean_median),
            per_proxy_corr_train_acc: self
                .per_proxy_corr_train_acc
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            mask_hash: self.mask_hash.clone(),
            wall_seconds: self.wall_seconds,
            ..row_base(cfg, cell, self.seed, self.method)
        }
    }
}

fn error_row(cfg: &ExperimentConfig, cell: &Cell, seed: u64, method: Method, err: &Error) -> MetricsRow {
    MetricsRow {
        status: "error".into(),
        error: err.to_string(),
        ..row_base(cfg, cell, seed, method)
    }
}

/// Appends rows to `metrics.csv`, flushing after each one.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(METRICS_COLUMNS).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics file, rejecting any header other than the frozen one.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(Error::Schema(format!("{}: metrics columns do not match schema version {METRICS_SCHEMA_VERSION}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize::<MetricsRow>() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        if row.schema_version != METRICS_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "{}: row has schema_version {}, expected {METRICS_SCHEMA_VERSION}",
                path.display(),
                row.schema_version
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------- runs

/// Artifacts shared by every method of one seed.
pub struct SeedContext {
    pub data: PreparedData,
    pub proxies: Option<ProxyEnsemble>,
    pub mask_hash: String,
    pub histogram: Option<Histogram>,
    pub empirical_gap: Option<f64>,
    pub per_proxy_corr_train_acc: Vec<f64>,
    pub certificate: Option<CertificateReport>,
}

/// Phase one for a seed: data, noise, proxies and diagnostics. The per-seed
/// files are written to `dir` when given.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<SeedContext> {
    let data = prepare_data(cfg, seed)?;
    let mask = data.train.truth().corrupt_mask().to_vec();
    let mask_hash = io::mask_hash(&mask);
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let p = d.join("mask.hash");
        fs::write(&p, format!("{mask_hash}\n")).map_err(|e| Error::io(&p, e))?;
    }
    let mut ctx = SeedContext {
        proxies: None,
        mask_hash,
        histogram: None,
        empirical_gap: None,
        per_proxy_corr_train_acc: Vec::new(),
        certificate: None,
        data,
    };
    if cfg.methods.iter().any(|m| m.needs_proxies()) {
        seed_diagnostics(cfg, seed, dir, &mask, &mut ctx)?;
    }
    Ok(ctx)
}

fn seed_diagnostics(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>, mask: &[bool], ctx: &mut SeedContext) -> Result<()> {
    let observed = ctx.data.train.observed();
    let ens = train_proxies(observed, &cfg.proxies, seed)?;
    let rm = ens.rank_matrix()?;
    let var = scores::rank_variance(&rm)?;
    let h = histogram(var.values(), mask, cfg.histogram_bins)?;
    let any_corrupt = mask.iter().any(|&c| c);
    let any_clean = mask.iter().any(|&c| !c);
    if any_corrupt && any_clean {
        let clean_mean = stats::mean(&stats::select(var.values(), mask, false)).unwrap_or(0.0);
        let corr_mean = stats::mean(&stats::select(var.values(), mask, true)).unwrap_or(0.0);
        ctx.empirical_gap = Some(clean_mean - corr_mean);
    }
    ctx.per_proxy_corr_train_acc = if any_corrupt {
        ens.runs
            .iter()
            .map(|r| learners::accuracy(&r.snapshot_model, observed, Some(mask)))
            .collect::<dris_core::Result<_>>()?
    } else {
        Vec::new()
    };
    if any_corrupt && any_clean {
        let bdry = boundary_mask(&ens.mean_margins()?, mask, cfg.certificate.bdry_fraction);
        if bdry.iter().any(|&b| b) {
            let est = certify::estimate_assumption_params(
                &rm,
                mask,
                &bdry,
                cfg.certificate.alpha_trim,
                cfg.certificate.quantile_level,
            )?;
            let eps = mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64;
            let params = est.to_params(mask.len(), rm.num_proxies(), cfg.certificate.delta, eps, cfg.alpha);
            let n_bdry = bdry.iter().filter(|&&b| b).count();
            let covers = n_bdry >= dris_core::math::floor_count(cfg.alpha, mask.len());
            match certify::separation_and_contamination(&params, covers) {
                Ok(mut report) => {
                    report.notes.push(format!(
                        "estimated from data: empirical gap {:.6}, {} bulk and {} tail corrupted examples, {n_bdry} boundary examples",
                        est.empirical_gap, est.n_bulk, est.n_tail
                    ));
                    ctx.certificate = Some(report);
                }
                Err(e) => log::warn!("seed {seed}: certificate not computed: {e}"),
            }
        }
    }
    if let Some(d) = dir {
        write_histogram(&d.join("histogram.csv"), &h)?;
        io::write_rank_matrix(&d.join("ranks.csv"), &rm)?;
        if let Some(c) = &ctx.certificate {
            io::write_certificate(&d.join("certificate.json"), c)?;
        }
    }
    ctx.histogram = Some(h);
    ctx.proxies = Some(ens);
    Ok(())
}

/// Clean examples with the lowest ensemble-mean margin, `fraction` of the
/// clean set at most.
pub fn boundary_mask(mean_margins: &[f64], corrupt_mask: &[bool], fraction: f64) -> Vec<bool> {
    let mut clean: Vec<usize> = (0..mean_margins.len()).filter(|&i| !corrupt_mask[i]).collect();
    clean.sort_by(|&a, &b| mean_margins[a].total_cmp(&mean_margins[b]).then(a.cmp(&b)));
    let take = dris_core::math::floor_count(fraction, clean.len());
    let mut out = vec![false; mean_margins.len()];
    for &i in &clean[..take] {
        out[i] = true;
    }
    out
}

/// Phases two and three for one method.
pub fn run_method(cfg: &ExperimentConfig, ctx: &SeedContext, seed: u64, method: Method) -> Result<RunMetrics> {
    let start = Instant::now();
    let observed = ctx.data.train.observed();
    let plan = method_plan(method, ctx.proxies.as_ref(), observed, cfg.alpha, cfg.xi, seed)?;
    let model = train_target(&cfg.target, observed, plan.as_ref(), seed)?;
    let acc = learners::accuracy(&model, &ctx.data.test, None)?;
    let mask = ctx.data.train.truth().corrupt_mask();
    let subset_size = plan.as_ref().and_then(|p| p.kept_indices().map(<[usize]>::len)).unwrap_or(observed.len());
    Ok(RunMetrics {
        seed,
        method,
        test_accuracy: 100.0 * acc,
        frac_corrupt_in_subset: frac_corrupt(plan.as_ref(), mask),
        subset_size,
        per_proxy_corr_train_acc: ctx.per_proxy_corr_train_acc.clone(),
        empirical_gap: ctx.empirical_gap,
        histogram: ctx.histogram.clone(),
        mask_hash: ctx.mask_hash.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn seed_err(seed: u64, e: Error) -> Error {
    Error::Seed { seed, source: Box::new(e) }
}

/// Runs every configured method for one seed, in parallel. Per-method
/// failures come back as `Err` entries in method order.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<Vec<(Method, Result<RunMetrics>)>> {
    let ctx = prepare_seed(cfg, seed, dir).map_err(|e| seed_err(seed, e))?;
    Ok(cfg
        .methods
        .par_iter()
        .map(|&m| (m, run_method(cfg, &ctx, seed, m).map_err(|e| seed_err(seed, e))))
        .collect())
}

fn seed_dir(root: Option<&Path>, cell: &Cell, seed: u64) -> Option<PathBuf> {
    root.map(|r| {
        let base = if cell.axis.is_empty() { r.to_path_buf() } else { r.join(format!("{}={}", cell.axis, cell.value)) };
        base.join(format!("seed-{seed}"))
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    writer: &mut Option<MetricsWriter>,
    keep_going: bool,
) -> Result<(Vec<RunMetrics>, Vec<MetricsRow>)> {
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    let root = cfg.output_dir.as_deref();
    for &seed in &cfg.seeds {
        log::info!("{}: seed {seed}{}", cfg.name, if cell.axis.is_empty() { String::new() } else { format!(" ({}={})", cell.axis, cell.value) });
        let results = match run_seed(cfg, seed, seed_dir(root, cell, seed).as_deref()) {
            Ok(r) => r,
            Err(e) => {
                // the whole seed failed before any method ran
                for &m in &cfg.methods {
                    let row = error_row(cfg, cell, seed, m, &e);
                    if let Some(w) = writer.as_mut() {
                        w.write(&row)?;
                    }
                    rows.push(row);
                }
                if keep_going {
                    log::warn!("{e}");
                    continue;
                }
                return Err(e);
            }
        };
        let mut first_err = None;
        for (m, r) in results {
            let row = match &r {
                Ok(rm) => rm.to_row(cfg, cell),
                Err(e) => error_row(cfg, cell, seed, m, e),
            };
            if let Some(w) = writer.as_mut() {
                w.write(&row)?;
            }
            rows.push(row);
            match r {
                Ok(rm) => metrics.push(rm),
                Err(e) => {
                    log::warn!("{m}: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        if let (Some(e), false) = (first_err, keep_going) {
            return Err(e);
        }
    }
    Ok((metrics, rows))
}

/// Runs every seed and method. Rows are flushed to `metrics.csv` under the
/// output directory as they complete; the first failure aborts the run after
/// the rest of its seed has been recorded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunMetrics>> {
    cfg.validate()?;
    let mut writer = match &cfg.output_dir {
        Some(d) => Some(MetricsWriter::create(&d.join("metrics.csv"))?),
        None => None,
    };
    Ok(run_cell(cfg, &Cell::default(), &mut writer, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    K,
    Alpha,
    Eps,
    Beta,
    /// Uniform-mix weight.
    Mix,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::K => "K",
            Axis::Alpha => "alpha",
            Axis::Eps => "eps",
            Axis::Beta => "beta",
            Axis::Mix => "k",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "K" => Ok(Axis::K),
            "alpha" => Ok(Axis::Alpha),
            "eps" | "epsilon" => Ok(Axis::Eps),
            "beta" => Ok(Axis::Beta),
            "k" | "mix" => Ok(Axis::Mix),
            _ => Err(format!("unknown sweep axis `{s}` (expected K, alpha, eps, beta or k)")),
        }
    }
}

/// Copy of `cfg` with the axis set to `value`.
pub fn apply_axis(cfg: &ExperimentConfig, axis: Axis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        Axis::K => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::Config(format!("K must be a positive integer, got {value}")));
            }
            c.proxies.k = value as usize;
        }
        Axis::Alpha => c.alpha = value,
        Axis::Eps => {
            c.noise.rate = value;
            if c.noise.kind == NoiseKind::None && value > 0.0 {
                c.noise.kind = NoiseKind::Uniform;
            }
            if value == 0.0 {
                c.noise.kind = NoiseKind::None;
            }
        }
        Axis::Beta | Axis::Mix => {
            let mut touched = false;
            for m in &mut c.methods {
                match (axis, &mut *m) {
                    (Axis::Beta, Method::Hybrid(b)) | (Axis::Mix, Method::UniformMix(b)) => {
                        *b = value;
                        touched = true;
                    }
                    _ => {}
                }
            }
            if !touched {
                return Err(Error::Config(format!("sweep axis {axis} needs a {} method", if axis == Axis::Beta { "hybrid" } else { "uniform-mix" })));
            }
        }
    }
    Ok(c)
}

/// One cell per value; each writes `{axis}={value}/seed-{s}` and appends to
/// the shared `metrics.csv`. Cell failures are recorded and the sweep
/// continues.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis, values: &[f64]) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // reject an axis the config cannot vary before any work is done
    apply_axis(cfg, axis, values[0])?;
    let mut writer = match &cfg.output_dir {
        Some(d) => Some(MetricsWriter::create(&d.join("metrics.csv"))?),
        None => None,
    };
    let mut all = Vec::new();
    for &v in values {
        let cell = Cell { axis: axis.to_string(), value: v.to_string() };
        let prepared = apply_axis(cfg, axis, v).and_then(|c| c.validate().map(|_| c));
        match prepared {
            Ok(c) => {
                let (_, rows) = run_cell(&c, &cell, &mut writer, true)?;
                all.extend(rows);
            }
            Err(e) => {
                log::warn!("{axis}={v}: {e}");
                for &seed in &cfg.seeds {
                    for &m in &cfg.methods {
                        let row = error_row(cfg, &cell, seed, m, &e);
                        if let Some(w) = writer.as_mut() {
                            w.write(&row)?;
                        }
                        all.push(row);
                    }
                }
            }
        }
    }
    Ok(all)
}

// ---------------------------------------------------------------- statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub t: f64,
    pub p_two_sided: f64,
    /// Zero spread: `t` is reported as signed infinity (or 0 for a zero
    /// mean) and `p` as 0.
    pub degenerate: bool,
}

/// Paired-t statistics of per-seed differences.
pub fn paired_t(deltas: &[f64]) -> Result<PairedT> {
    let n = deltas.len();
    if n < 2 {
        return Err(dris_core::Error::UndefinedStatistic("paired t needs at least two pairs").into());
    }
    let mean = stats::mean(deltas).expect("nonempty");
    let sd = stats::sample_std(deltas).expect("n >= 2");
    if sd == 0.0 {
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(PairedT { n, mean, sd, t, p_two_sided: p, degenerate: true });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedT { n, mean, sd, t, p_two_sided: p, degenerate: false })
}

// ---------------------------------------------------------------- K ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAblationRow {
    pub k: usize,
    pub empirical_gap: f64,
    pub corrupt_below_clean_p10: Option<f64>,
    pub corrupt_below_clean_median: Option<f64>,
    pub histogram: Histogram,
}

/// Rank-variance gap and histogram for each `K` on the planted ensemble.
pub fn k_ablation(pe: &PlantedEnsemble, ks: &[usize], seed: u64, bins: usize) -> Result<Vec<KAblationRow>> {
    ks.iter()
        .map(|&k| {
            let draw = pe.sample(k, seed)?;
            let var = if k >= 2 {
                scores::rank_variance(&draw.ranks)?.into_values()
            } else {
                vec![0.0; draw.corrupt_mask.len()]
            };
            let h = histogram(&var, &draw.corrupt_mask, bins)?;
            let clean = stats::mean(&stats::select(&var, &draw.corrupt_mask, false)).unwrap_or(0.0);
            let corr = stats::mean(&stats::select(&var, &draw.corrupt_mask, true)).unwrap_or(0.0);
            Ok(KAblationRow {
                k,
                empirical_gap: clean - corr,
                corrupt_below_clean_p10: h.corrupt_below_clean_p10,
                corrupt_below_clean_median: h.corrupt_below_clean_median,
                histogram: h,
            })
        })
        .collect()
}
