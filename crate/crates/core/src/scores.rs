//! Per-example scores: the cross-proxy rank variance and the baselines it is
//! compared against.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Observed;
use crate::error::{check_dim, Error, Result};
use crate::learners::{PerSampleStats, TrainedModel};
use crate::math;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "param")]
pub enum ScoreKind {
    RankVariance,
    El2n,
    ConsensusMeanRank,
    GradNorm,
    Loss,
    Forgetting,
    Aum,
    Hybrid(f64),
    UniformMix(f64),
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::RankVariance => f.write_str("rank-variance"),
            ScoreKind::El2n => f.write_str("el2n"),
            ScoreKind::ConsensusMeanRank => f.write_str("consensus-mean-rank"),
            ScoreKind::GradNorm => f.write_str("grad-norm"),
            ScoreKind::Loss => f.write_str("loss"),
            ScoreKind::Forgetting => f.write_str("forgetting"),
            ScoreKind::Aum => f.write_str("aum"),
            ScoreKind::Hybrid(b) => write!(f, "hybrid({b})"),
            ScoreKind::UniformMix(k) => write!(f, "uniform-mix({k})"),
        }
    }
}

impl ScoreKind {
    /// Inverse of the `Display` form.
    pub fn parse(s: &str) -> Option<Self> {
        let param = |prefix: &str| -> Option<f64> {
            s.strip_prefix(prefix)?.strip_suffix(')')?.parse().ok()
        };
        Some(match s {
            "rank-variance" => ScoreKind::RankVariance,
            "el2n" => ScoreKind::El2n,
            "consensus-mean-rank" => ScoreKind::ConsensusMeanRank,
            "grad-norm" => ScoreKind::GradNorm,
            "loss" => ScoreKind::Loss,
            "forgetting" => ScoreKind::Forgetting,
            "aum" => ScoreKind::Aum,
            _ => {
                if let Some(b) = param("hybrid(") {
                    ScoreKind::Hybrid(b)
                } else {
                    ScoreKind::UniformMix(param("uniform-mix(")?)
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("scores", "entries must be finite"));
        }
        Ok(ScoreVector { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same values under a different kind tag.
    pub fn relabel(self, kind: ScoreKind) -> Self {
        ScoreVector {
            values: self.values,
            kind,
        }
    }
}

/// Normalized loss ranks of every example under each of `K` proxies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    ranks: Matrix<f64>,
    proxy_ids: Vec<String>,
    snapshot_epoch: usize,
}

impl RankMatrix {
    /// Wraps an `N x K` matrix of ranks in `(0, 1]`.
    pub fn new(ranks: Matrix<f64>, proxy_ids: Vec<String>, snapshot_epoch: usize) -> Result<Self> {
        check_dim("proxy ids", ranks.cols(), proxy_ids.len())?;
        if ranks.as_slice().iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::param("ranks", "entries must lie in (0, 1]"));
        }
        Ok(RankMatrix {
            ranks,
            proxy_ids,
            snapshot_epoch,
        })
    }

    /// Ranks each proxy's loss column with [`normalized_ranks`].
    pub fn from_losses(losses: &[Vec<f64>], proxy_ids: Vec<String>, snapshot_epoch: usize) -> Result<Self> {
        check_dim("proxy ids", losses.len(), proxy_ids.len())?;
        let columns = losses.iter().map(|l| normalized_ranks(l)).collect::<Result<Vec<_>>>()?;
        let ranks = Matrix::from_columns(&columns)?;
        Ok(RankMatrix {
            ranks,
            proxy_ids,
            snapshot_epoch,
        })
    }

    pub fn ranks(&self) -> &Matrix<f64> {
        &self.ranks
    }

    pub fn proxy_ids(&self) -> &[String] {
        &self.proxy_ids
    }

    pub fn snapshot_epoch(&self) -> usize {
        self.snapshot_epoch
    }

    pub fn num_examples(&self) -> usize {
        self.ranks.rows()
    }

    pub fn num_proxies(&self) -> usize {
        self.ranks.cols()
    }

    /// Keeps only the first `k` proxies.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.num_proxies() {
            return Err(Error::param("k", "must lie in 1..=K"));
        }
        let columns: Vec<Vec<f64>> = (0..k).map(|j| self.ranks.column(j)).collect();
        Ok(RankMatrix {
            ranks: Matrix::from_columns(&columns)?,
            proxy_ids: self.proxy_ids[..k].to_vec(),
            snapshot_epoch: self.snapshot_epoch,
        })
    }
}

/// Ascending-loss ordinal ranks divided by `N`; equal losses are ranked by
/// ascending index.
pub fn normalized_ranks(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::param("losses", "NaN loss cannot be ranked"));
    }
    let n = losses.len();
    let mut order: Vec<usize> = (0..n).collect();
    // partial_cmp so that -0.0 and 0.0 tie
    order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = alloc::vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = (pos + 1) as f64 / n as f64;
    }
    Ok(ranks)
}

/// `(1/K) sum_k (rho_ik - mean_i)^2` per row.
pub fn rank_variance(rm: &RankMatrix) -> Result<ScoreVector> {
    let k = rm.num_proxies();
    if k < 2 {
        return Err(Error::param("K", "rank variance needs at least two proxies"));
    }
    let values = rm
        .ranks
        .iter_rows()
        .map(|row| {
            let m = row.iter().sum::<f64>() / k as f64;
            row.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / k as f64
        })
        .collect();
    ScoreVector::new(values, ScoreKind::RankVariance)
}

pub fn consensus_mean_rank(rm: &RankMatrix) -> Result<ScoreVector> {
    let k = rm.num_proxies();
    if k == 0 {
        return Err(Error::param("K", "need at least one proxy"));
    }
    let values = rm.ranks.iter_rows().map(|row| row.iter().sum::<f64>() / k as f64).collect();
    ScoreVector::new(values, ScoreKind::ConsensusMeanRank)
}

/// Mean over proxies of `||softmax(z(x_i)) - onehot(y_i)||`. Hinge models
/// are scored through the softmax of their logits as well.
pub fn el2n(proxies: &[TrainedModel], data: &Observed) -> Result<ScoreVector> {
    if proxies.is_empty() {
        return Err(Error::param("proxies", "need at least one proxy"));
    }
    let mut values = alloc::vec![0.0; data.len()];
    for model in proxies {
        check_dim("input features", model.spec().input_dim, data.dim())?;
        check_dim("class count", model.spec().num_classes, data.num_classes())?;
        for (i, v) in values.iter_mut().enumerate() {
            let p = model.probabilities(data.x(i));
            *v += error_norm(&p, data.labels()[i]);
        }
    }
    let k = proxies.len() as f64;
    values.iter_mut().for_each(|v| *v /= k);
    ScoreVector::new(values, ScoreKind::El2n)
}

/// `||p - onehot(y)||`.
pub fn error_norm(probs: &[f64], y: usize) -> f64 {
    let sq: f64 = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let e = p - if c == y { 1.0 } else { 0.0 };
            e * e
        })
        .sum();
    math::sqrt(sq)
}

/// True-to-false transitions in each row of an `N x T` correctness
/// trajectory, summed over all trajectories given.
pub fn forgetting_events(trajectories: &[Matrix<bool>]) -> Result<ScoreVector> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::param("trajectories", "need at least one trajectory"))?;
    let n = first.rows();
    let mut counts = alloc::vec![0.0; n];
    for t in trajectories {
        check_dim("trajectory rows", n, t.rows())?;
        if t.cols() < 2 {
            return Err(Error::param("T", "forgetting needs at least two epochs"));
        }
        for (c, row) in counts.iter_mut().zip(t.iter_rows()) {
            *c += row.windows(2).filter(|w| w[0] && !w[1]).count() as f64;
        }
    }
    ScoreVector::new(counts, ScoreKind::Forgetting)
}

/// Per-example mean margin over the `T` columns of a trajectory.
pub fn aum(margins: &Matrix<f64>) -> Result<ScoreVector> {
    let t = margins.cols();
    if t == 0 {
        return Err(Error::param("T", "need at least one epoch"));
    }
    let values = margins.iter_rows().map(|row| row.iter().sum::<f64>() / t as f64).collect();
    ScoreVector::new(values, ScoreKind::Aum)
}

/// `beta * g + (1 - beta) * s` elementwise.
pub fn hybrid(grad_norms: &ScoreVector, rank_var: &ScoreVector, beta: f64) -> Result<ScoreVector> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param("beta", "must lie in [0, 1]"));
    }
    check_dim("score vectors", grad_norms.len(), rank_var.len())?;
    let values = grad_norms
        .values
        .iter()
        .zip(&rank_var.values)
        .map(|(&g, &s)| beta * g + (1.0 - beta) * s)
        .collect();
    ScoreVector::new(values, ScoreKind::Hybrid(beta))
}

pub fn grad_norm_scores(stats: &PerSampleStats) -> Result<ScoreVector> {
    ScoreVector::new(stats.grad_norm.clone(), ScoreKind::GradNorm)
}

pub fn loss_scores(stats: &PerSampleStats) -> Result<ScoreVector> {
    ScoreVector::new(stats.loss.clone(), ScoreKind::Loss)
}

/// Mean of per-proxy score vectors of one kind.
pub fn ensemble_mean(per_proxy: &[ScoreVector]) -> Result<ScoreVector> {
    let first = per_proxy
        .first()
        .ok_or_else(|| Error::param("scores", "need at least one score vector"))?;
    let mut values = alloc::vec![0.0; first.len()];
    for s in per_proxy {
        check_dim("score vectors", first.len(), s.len())?;
        for (v, &x) in values.iter_mut().zip(&s.values) {
            *v += x;
        }
    }
    let k = per_proxy.len() as f64;
    values.iter_mut().for_each(|v| *v /= k);
    ScoreVector::new(values, first.kind)
}
