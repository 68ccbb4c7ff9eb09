//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use dris_core::data::SyntheticSpec;
use dris_core::learners::{ModelKind, ModelSpec, Schedule, TrainConfig};

use crate::error::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "DRIS_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Random,
    DrisStatic,
    DrisOnline,
    El2n,
    Consensus,
    Forgetting,
    Aum,
    GradNormIs,
    LossIs,
    UniformSgd,
    Hybrid(f64),
    UniformMix(f64),
}

impl Method {
    /// Static methods train on a fixed subset with step parity; the others
    /// see all `N` examples every epoch.
    pub fn is_static(self) -> bool {
        matches!(
            self,
            Method::Random | Method::DrisStatic | Method::El2n | Method::Consensus | Method::Forgetting | Method::Aum
        )
    }

    pub fn needs_proxies(self) -> bool {
        !matches!(self, Method::Random | Method::UniformSgd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Random => f.write_str("random"),
            Method::DrisStatic => f.write_str("dris-static"),
            Method::DrisOnline => f.write_str("dris-online"),
            Method::El2n => f.write_str("el2n"),
            Method::Consensus => f.write_str("consensus"),
            Method::Forgetting => f.write_str("forgetting"),
            Method::Aum => f.write_str("aum"),
            Method::GradNormIs => f.write_str("grad-norm-is"),
            Method::LossIs => f.write_str("loss-is"),
            Method::UniformSgd => f.write_str("uniform-sgd"),
            Method::Hybrid(b) => write!(f, "hybrid({b})"),
            Method::UniformMix(k) => write!(f, "uniform-mix({k})"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let param = |prefix: &str| -> Option<std::result::Result<f64, String>> {
            let inner = s.strip_prefix(prefix)?.strip_suffix(')')?;
            Some(inner.trim().parse().map_err(|_| format!("bad parameter in `{s}`")))
        };
        Ok(match s {
            "random" => Method::Random,
            "dris-static" => Method::DrisStatic,
            "dris-online" => Method::DrisOnline,
            "el2n" => Method::El2n,
            "consensus" => Method::Consensus,
            "forgetting" => Method::Forgetting,
            "aum" => Method::Aum,
            "grad-norm-is" => Method::GradNormIs,
            "loss-is" => Method::LossIs,
            "uniform-sgd" => Method::UniformSgd,
            _ => {
                if let Some(b) = param("hybrid(") {
                    Method::Hybrid(b?)
                } else if let Some(k) = param("uniform-mix(") {
                    Method::UniformMix(k?)
                } else {
                    return Err(format!("unknown method `{s}`"));
                }
            }
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Two-cluster mixture; the test set is an independent clean draw of
    /// `test_n` points from the same mixture.
    Synthetic {
        #[serde(default = "d_n")]
        n: usize,
        #[serde(default = "d_d")]
        d: usize,
        #[serde(default = "d_rare_ratio")]
        rare_ratio: f64,
        #[serde(default = "d_var_rare")]
        var_rare: f64,
        #[serde(default = "d_var_common")]
        var_common: f64,
        #[serde(default = "d_rare_offset")]
        rare_offset: f64,
        #[serde(default = "d_test_n")]
        test_n: usize,
        /// Fixed generation seed; when absent every run seed draws its own
        /// dataset.
        seed: Option<u64>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        header: bool,
        num_classes: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn d_n() -> usize {
    2000
}
fn d_d() -> usize {
    20
}
fn d_rare_ratio() -> f64 {
    0.1
}
fn d_var_rare() -> f64 {
    400.0
}
fn d_var_common() -> f64 {
    1.0
}
fn d_rare_offset() -> f64 {
    15.0
}
fn d_test_n() -> usize {
    2000
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            n: d_n(),
            d: d_d(),
            rare_ratio: d_rare_ratio(),
            var_rare: d_var_rare(),
            var_common: d_var_common(),
            rare_offset: d_rare_offset(),
            test_n: d_test_n(),
            seed: None,
        }
    }
}

impl DatasetConfig {
    pub fn synthetic_spec(&self, n_override: Option<usize>, seed: u64) -> Option<SyntheticSpec> {
        match self {
            DatasetConfig::Synthetic {
                n,
                d,
                rare_ratio,
                var_rare,
                var_common,
                rare_offset,
                ..
            } => Some(SyntheticSpec {
                n: n_override.unwrap_or(*n),
                d: *d,
                rare_ratio: *rare_ratio,
                var_rare: *var_rare,
                var_common: *var_common,
                rare_offset: *rare_offset,
                seed,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    Uniform,
    Targeted,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Targeted => "targeted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub rate: f64,
}

/// Model architecture without the data-dependent dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden_width: usize,
    #[serde(default)]
    pub l2_lambda: f64,
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            input_dim,
            num_classes,
            hidden_width: self.hidden_width,
            l2_lambda: self.l2_lambda,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::LinearSquaredHinge,
            hidden_width: 0,
            l2_lambda: 0.1,
        }
    }
}

pub fn default_train() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 8,
        lr: 0.01,
        schedule: Schedule::DecreasingClamped,
        momentum: 0.0,
        weight_decay: 0.0,
        seed: 0,
        curvature_clamp: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    /// Epoch whose losses are ranked; defaults to half the proxy epochs.
    pub snapshot_epoch: Option<usize>,
}

fn d_k() -> usize {
    4
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            k: d_k(),
            model: ModelConfig::default(),
            train: default_train(),
            snapshot_epoch: None,
        }
    }
}

impl ProxyConfig {
    pub fn snapshot(&self) -> usize {
        self.snapshot_epoch.unwrap_or((self.train.epochs / 2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default)]
    pub model: ModelConfig,
    /// `epochs` is the full-data budget; static methods scale it by `1/alpha`.
    #[serde(default = "default_train")]
    pub train: TrainConfig,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            model: ModelConfig::default(),
            train: default_train(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_alpha_trim")]
    pub alpha_trim: f64,
    /// Quantile of pooled bulk ranks whose distance from 1 estimates `tau`.
    #[serde(default = "d_quantile")]
    pub quantile_level: f64,
    /// Fraction of clean examples, lowest ensemble-mean margin first, taken
    /// as the boundary set.
    #[serde(default = "d_bdry_fraction")]
    pub bdry_fraction: f64,
}

fn d_delta() -> f64 {
    0.05
}
fn d_alpha_trim() -> f64 {
    0.1
}
fn d_quantile() -> f64 {
    0.05
}
fn d_bdry_fraction() -> f64 {
    0.2
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            delta: d_delta(),
            alpha_trim: d_alpha_trim(),
            quantile_level: d_quantile(),
            bdry_fraction: d_bdry_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "d_name")]
    pub name: String,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub proxies: ProxyConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_xi")]
    pub xi: f64,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "d_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub certificate: CertificateConfig,
}

fn d_name() -> String {
    "experiment".into()
}
fn d_alpha() -> f64 {
    0.25
}
fn d_xi() -> f64 {
    dris_core::sampler::DEFAULT_XI
}
fn d_bins() -> usize {
    50
}

impl ExperimentConfig {
    /// The heavy-tailed synthetic benchmark with every default spelled out.
    pub fn synthetic_benchmark(methods: Vec<Method>, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: "synthetic-heavy-tailed".into(),
            dataset: DatasetConfig::default(),
            noise: NoiseConfig::default(),
            methods,
            proxies: ProxyConfig::default(),
            target: TargetConfig::default(),
            alpha: d_alpha(),
            xi: d_xi(),
            seeds,
            output_dir: None,
            histogram_bins: d_bins(),
            certificate: CertificateConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, then applies the output-dir
    /// environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = Some(PathBuf::from(dir));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1]".into()));
        }
        if self.xi.is_nan() || self.xi <= 0.0 {
            return Err(Error::Config("xi must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise.rate) {
            return Err(Error::Config("noise.rate must lie in [0, 1)".into()));
        }
        if self.noise.kind == NoiseKind::None && self.noise.rate > 0.0 {
            return Err(Error::Config("noise.rate set but noise.kind is none".into()));
        }
        if self.histogram_bins < 2 {
            return Err(Error::Config("histogram_bins must be at least 2".into()));
        }
        let needs_proxies = self.methods.iter().any(|m| m.needs_proxies());
        if needs_proxies && self.proxies.k < 2 {
            return Err(Error::Config("rank-based methods need proxies.k >= 2".into()));
        }
        let snap = self.proxies.snapshot();
        if snap == 0 || snap > self.proxies.train.epochs {
            return Err(Error::Config("proxies.snapshot_epoch must lie in 1..=proxies.train.epochs".into()));
        }
        for m in &self.methods {
            match *m {
                Method::Hybrid(b) if !(0.0..=1.0).contains(&b) => {
                    return Err(Error::Config(format!("{m}: beta must lie in [0, 1]")));
                }
                Method::UniformMix(k) if !(0.0..=1.0).contains(&k) => {
                    return Err(Error::Config(format!("{m}: k must lie in [0, 1]")));
                }
                _ => {}
            }
        }
        self.proxies.train.validate().map_err(|e| Error::Config(format!("proxies.train: {e}")))?;
        self.target.train.validate().map_err(|e| Error::Config(format!("target.train: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Random, Method::DrisOnline, Method::Hybrid(0.25), Method::UniformMix(0.5), Method::GradNormIs] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
        assert!("hybrid(x)".parse::<Method>().is_err());
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            schema_version = 1
            methods = ["uniform-sgd", "dris-static"]
            seeds = [0, 1]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.proxies.k, 4);
        assert_eq!(cfg.proxies.snapshot(), 100);
        assert_eq!(cfg.dataset, DatasetConfig::default());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::synthetic_benchmark(vec![Method::Hybrid(0.5), Method::Aum], vec![3]);
        cfg.noise = NoiseConfig { kind: NoiseKind::Targeted, rate: 0.25 };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            "schema_version = 2\nmethods = [\"random\"]\nseeds = [0]",
            "schema_version = 1\nmethods = [\"random\"]\nseeds = []",
            "schema_version = 1\nmethods = [\"nope\"]\nseeds = [0]",
            "schema_version = 1\nmethods = [\"random\"]\nseeds = [0]\nalpha = 0.0",
            "schema_version = 1\nmethods = [\"random\"]\nseeds = [0]\nextra = 1",
            "schema_version = 1\nmethods = [\"dris-static\"]\nseeds = [0]\n[proxies]\nk = 1",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
        assert!(matches!(ExperimentConfig::from_toml_str(bad[0]), Err(Error::Schema(_))));
    }
}
