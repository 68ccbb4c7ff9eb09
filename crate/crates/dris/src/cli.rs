//! Command-line front end. Each subcommand binds one library call.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dris_core::certify::{self, TheoremParams};
use dris_core::data::{self, LabeledDataset, Observed};
use dris_core::learners;
use dris_core::rng;
use dris_core::sampler::{self, SamplingPlan};
use dris_core::scores::ScoreKind;

use crate::config::{ExperimentConfig, Method, NoiseKind};
use crate::error::Result;
use crate::harness::{self, Axis, ProxyEnsemble};
use crate::{io, report};

#[derive(Debug, Parser)]
#[command(name = "dris", version, about = "Rank-disagreement importance sampling experiments")]
pub struct Cli {
    /// Master seed; every random choice derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the synthetic two-cluster dataset.
    Generate(GenerateArgs),
    /// Inject uniform or targeted label noise.
    Corrupt(CorruptArgs),
    /// Train the proxy ensemble and write its rank matrix.
    TrainProxies(TrainProxiesArgs),
    /// Per-example scores from a proxy ensemble.
    Score(ScoreArgs),
    /// Build a static subset or an online sampling plan from scores.
    Select(SelectArgs),
    /// Train the target model, optionally under a sampling plan.
    TrainTarget(TrainTargetArgs),
    /// Evaluate the separation certificate.
    Certify(CertifyArgs),
    /// Run an experiment over one axis.
    Sweep(SweepArgs),
    /// Aggregate metrics files into mean ± std tables.
    Report(ReportArgs),
    /// Run every seed and method of an experiment.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config (TOML). Defaults to the synthetic benchmark.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::synthetic_benchmark(vec![Method::DrisStatic], vec![0])),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Training set CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Independent test draw CSV.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset CSV, label in the last column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub num_classes: Option<usize>,
}

impl DataArg {
    fn read(&self) -> Result<Observed> {
        io::read_csv_dataset(&self.data, self.header, self.num_classes)
    }
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, value_parser = parse_noise)]
    pub noise: NoiseKind,
    #[arg(long)]
    pub rate: f64,
    /// Corrupted dataset CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Corruption mask, one 0/1 line per example.
    #[arg(long)]
    pub mask: PathBuf,
    /// Attacker checkpoint for targeted noise; trained on the clean labels
    /// from the config's target settings when absent.
    #[arg(long)]
    pub attacker: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainProxiesArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub snapshot_epoch: Option<usize>,
    /// Directory for `proxies.json` and `ranks.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// `proxies.json` written by `train-proxies`.
    #[arg(long)]
    pub proxies: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Scores CSV written by `score`.
    #[arg(long, required_unless_present = "random")]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Online plan `q ∝ s + xi·mean(s)` instead of a top-alpha subset.
    #[arg(long, conflicts_with = "random")]
    pub online: bool,
    #[arg(long, default_value_t = sampler::DEFAULT_XI)]
    pub xi: f64,
    /// Uniformly random subset of `--n` examples.
    #[arg(long, requires = "n")]
    pub random: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainTargetArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Test CSV to report accuracy on.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long = "N", default_value_t = 1000)]
    pub n: usize,
    #[arg(long = "K", default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    pub tau_bdry: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha_trim: f64,
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub v_tail: f64,
    /// Assert that the boundary set holds at least alpha·N examples.
    #[arg(long)]
    pub bdry_covers_subset: bool,
    /// Exit 1 unless the threshold separates boundary and bulk.
    #[arg(long)]
    pub assert_separated: bool,
    /// Exit 1 unless the subset is certified.
    #[arg(long)]
    pub assert_certified: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_axis)]
    pub axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    /// Method for paired-t columns.
    #[arg(long, default_value = "uniform-sgd")]
    pub baseline: String,
    /// Summary CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn parse_noise(s: &str) -> std::result::Result<NoiseKind, String> {
    match s {
        "none" => Ok(NoiseKind::None),
        "uniform" => Ok(NoiseKind::Uniform),
        "targeted" => Ok(NoiseKind::Targeted),
        _ => Err(format!("unknown noise `{s}` (none, uniform, targeted)")),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse()
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse()
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn main() -> i32 {
    main_from(std::env::args_os())
}

/// `main` with an explicit argument list, the program name first.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_target(false).try_init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            // the error's Display already includes its sources
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    } else {
        print!("{}", human());
    }
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    let uses_seed = !matches!(cli.command, Command::Certify(_) | Command::Report(_) | Command::Select(SelectArgs { random: false, .. }));
    if uses_seed {
        match &cli.command {
            Command::Run(_) | Command::Sweep(_) if cli.seed.is_none() => eprintln!("master seeds: from config"),
            _ => eprintln!("master seed: {seed}"),
        }
    }
    match &cli.command {
        Command::Generate(a) => generate(a, seed),
        Command::Corrupt(a) => corrupt(a, seed),
        Command::TrainProxies(a) => train_proxies(a, seed),
        Command::Score(a) => score(a),
        Command::Select(a) => select(a, seed, cli.json),
        Command::TrainTarget(a) => train_target(a, seed, cli.json),
        Command::Certify(a) => certify_cmd(a, cli.json),
        Command::Sweep(a) => sweep(a, cli.seed, cli.json),
        Command::Report(a) => report_cmd(a, cli.json),
        Command::Run(a) => run(a, cli.seed, cli.json),
    }
}

fn generate(a: &GenerateArgs, seed: u64) -> Result<i32> {
    let mut cfg = a.config.load()?;
    if let (Some(n), crate::config::DatasetConfig::Synthetic { n: cn, .. }) = (a.n, &mut cfg.dataset) {
        *cn = n;
    }
    cfg.noise = Default::default();
    let prepared = harness::prepare_data(&cfg, seed)?;
    io::write_csv_dataset(&a.out, prepared.train.observed(), a.header)?;
    if let Some(t) = &a.test_out {
        io::write_csv_dataset(t, &prepared.test, a.header)?;
    }
    eprintln!("wrote {} examples to {}", prepared.train.len(), a.out.display());
    Ok(0)
}

fn corrupt(a: &CorruptArgs, seed: u64) -> Result<i32> {
    let mut cfg = a.config.load()?;
    let clean = a.data.read()?;
    let ds = LabeledDataset::new(clean.features().clone(), clean.labels().to_vec(), clean.num_classes())?;
    let out = match (a.noise, &a.attacker) {
        (NoiseKind::Targeted, Some(p)) => {
            let attacker = io::read_checkpoint(p)?;
            data::inject_targeted_noise(&ds, a.rate, &attacker, rng::derive_seed(seed, "noise"))?
        }
        _ => {
            cfg.noise = crate::config::NoiseConfig { kind: a.noise, rate: a.rate };
            harness::corrupt(&cfg, &ds, seed)?
        }
    };
    io::write_csv_dataset(&a.out, out.observed(), a.data.header)?;
    io::write_mask(&a.mask, out.truth().corrupt_mask())?;
    eprintln!("flipped {} of {} labels; mask {}", out.truth().num_corrupt(), out.len(), io::mask_hash(out.truth().corrupt_mask()));
    Ok(0)
}

pub const PROXIES_FILE: &str = "proxies.json";

fn train_proxies(a: &TrainProxiesArgs, seed: u64) -> Result<i32> {
    let mut cfg = a.config.load()?;
    if let Some(k) = a.k {
        cfg.proxies.k = k;
    }
    if a.snapshot_epoch.is_some() {
        cfg.proxies.snapshot_epoch = a.snapshot_epoch;
    }
    let data = a.data.read()?;
    let ens = harness::train_proxies(&data, &cfg.proxies, seed)?;
    io::write_json(&a.out_dir.join(PROXIES_FILE), &ens)?;
    if ens.len() >= 2 {
        io::write_rank_matrix(&a.out_dir.join("ranks.csv"), &ens.rank_matrix()?)?;
    }
    eprintln!("trained {} proxies; snapshot epoch {}", ens.len(), ens.snapshot_epoch);
    Ok(0)
}

fn score(a: &ScoreArgs) -> Result<i32> {
    let data = a.data.read()?;
    let ens: ProxyEnsemble = io::read_json(&a.proxies)?;
    let s = harness::method_scores(a.method, &ens, &data)?;
    io::write_scores(&a.out, &s)?;
    Ok(0)
}

#[derive(Serialize)]
struct PlanSummary {
    mode: &'static str,
    n: usize,
    kept: Option<usize>,
}

fn select(a: &SelectArgs, seed: u64, json: bool) -> Result<i32> {
    let plan = if a.random {
        let n = a.n.expect("clap enforces --n");
        let dummy = Observed::new(dris_core::Matrix::filled(n, 1, 0.0), vec![0; n], 2)?;
        harness::method_plan(Method::Random, None, &dummy, a.alpha, a.xi, seed)?.expect("random plan")
    } else {
        let s = io::read_scores(a.scores.as_ref().expect("clap enforces --scores"))?;
        if let ScoreKind::UniformMix(_) = s.kind() {
            sampler::from_masses(s.values(), a.xi)?
        } else if a.online {
            sampler::online_distribution(&s, a.xi)?
        } else {
            sampler::select_top_alpha(&s, a.alpha)?
        }
    };
    io::write_plan(&a.out, &plan)?;
    let summary = PlanSummary {
        mode: if plan.is_static() { "static" } else { "online" },
        n: plan.len(),
        kept: plan.kept_indices().map(<[usize]>::len),
    };
    emit(json, &summary, || match summary.kept {
        Some(k) => format!("static subset: {k} of {} examples\n", summary.n),
        None => format!("online plan over {} examples\n", summary.n),
    });
    Ok(0)
}

#[derive(Serialize)]
struct TargetSummary {
    epochs: usize,
    test_accuracy: Option<f64>,
}

fn train_target(a: &TrainTargetArgs, seed: u64, json: bool) -> Result<i32> {
    let cfg = a.config.load()?;
    let data = a.data.read()?;
    let plan: Option<SamplingPlan> = a.plan.as_deref().map(io::read_plan).transpose()?;
    let model = harness::train_target(&cfg.target, &data, plan.as_ref(), seed)?;
    io::write_checkpoint(&a.out, &model)?;
    let test_accuracy = match &a.test {
        Some(p) => {
            let t = io::read_csv_dataset(p, a.data.header, Some(data.num_classes()))?;
            Some(100.0 * learners::accuracy(&model, &t, None)?)
        }
        None => None,
    };
    let epochs = match &plan {
        Some(SamplingPlan::Static { alpha, .. }) => sampler::step_parity_epochs(cfg.target.train.epochs, *alpha)?,
        _ => cfg.target.train.epochs,
    };
    let s = TargetSummary { epochs, test_accuracy };
    emit(json, &s, || match s.test_accuracy {
        Some(acc) => format!("trained {} epochs; test accuracy {acc:.2}%\n", s.epochs),
        None => format!("trained {} epochs\n", s.epochs),
    });
    Ok(0)
}

fn certify_cmd(a: &CertifyArgs, json: bool) -> Result<i32> {
    let p = TheoremParams {
        n: a.n,
        k: a.k,
        delta: a.delta,
        tau: a.tau,
        gamma: a.gamma,
        tau_bdry: a.tau_bdry,
        alpha_trim: a.alpha_trim,
        epsilon: a.epsilon,
        alpha: a.alpha,
        v_tail: a.v_tail,
    };
    let rep = certify::separation_and_contamination(&p, a.bdry_covers_subset)?;
    if let Some(out) = &a.out {
        io::write_certificate(out, &rep)?;
    }
    emit(json, &rep, || {
        let mut s = String::new();
        let line = |s: &mut String, k: &str, v: String| s.push_str(&format!("{k:<22} {v}\n"));
        line(&mut s, "N, K, delta", format!("{}, {}, {}", p.n, p.k, p.delta));
        line(&mut s, "tau, gamma, tau_bdry", format!("{}, {}, {}", p.tau, p.gamma, p.tau_bdry));
        line(&mut s, "mcdiarmid radius", format!("{:.5}", rep.mcdiarmid_radius));
        line(&mut s, "θ*", format!("{:.5}", rep.theta_star));
        line(&mut s, "boundary lower bound", format!("{:.5}", rep.bdry_lower));
        line(&mut s, "Δ'", format!("{:.5}", rep.delta_prime));
        line(&mut s, "separated", rep.separated.to_string());
        line(&mut s, "subset certified", rep.subset_certified.to_string());
        line(&mut s, "contamination cap", format!("{:.5}", rep.contamination_cap));
        if let Some(k) = certify::min_k_for_separation(&p) {
            line(&mut s, "smallest separating K", k.to_string());
        }
        for n in &rep.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    });
    let failed = (a.assert_separated && !rep.separated) || (a.assert_certified && !rep.subset_certified);
    if failed {
        eprintln!("certificate assertion failed");
        return Ok(1);
    }
    Ok(0)
}

fn with_overrides(mut cfg: ExperimentConfig, seed: Option<u64>, out_dir: &Option<PathBuf>) -> ExperimentConfig {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if out_dir.is_some() {
        cfg.output_dir = out_dir.clone();
    }
    cfg
}

fn print_metrics_location(cfg: &ExperimentConfig) {
    match &cfg.output_dir {
        Some(d) => eprintln!("metrics: {}", d.join("metrics.csv").display()),
        None => eprintln!("no output_dir set; metrics not written"),
    }
}

fn sweep(a: &SweepArgs, seed: Option<u64>, json: bool) -> Result<i32> {
    let cfg = with_overrides(ExperimentConfig::load(&a.config)?, seed, &a.out_dir);
    let rows = harness::sweep(&cfg, a.axis, &a.values)?;
    print_metrics_location(&cfg);
    let rep = report::summarize(&rows, Some("uniform-sgd").filter(|b| cfg.methods.iter().any(|m| m.to_string() == *b)));
    emit(json, &rep, || rep.render());
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", rows.len());
        return Ok(1);
    }
    Ok(0)
}

fn run(a: &RunArgs, seed: Option<u64>, json: bool) -> Result<i32> {
    let cfg = with_overrides(ExperimentConfig::load(&a.config)?, seed, &a.out_dir);
    let metrics = harness::run_experiment(&cfg)?;
    print_metrics_location(&cfg);
    let rows: Vec<_> = metrics.iter().map(|m| m.to_row(&cfg, &harness::Cell::default())).collect();
    let rep = report::summarize(&rows, Some("uniform-sgd").filter(|b| cfg.methods.iter().any(|m| m.to_string() == *b)));
    emit(json, &rep, || rep.render());
    Ok(0)
}

fn report_cmd(a: &ReportArgs, json: bool) -> Result<i32> {
    let rep = report::report(&a.metrics, Some(&a.baseline))?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &a.out {
        rep.write_csv(out)?;
    }
    emit(json, &rep, || rep.render());
    Ok(0)
}
