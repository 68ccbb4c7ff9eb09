//! Static top-alpha pruning and online importance sampling from scores.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Observed;
use crate::error::{check_dim, Error, Result};
use crate::learners::{self, EpochSampler, TrainedModel};
use crate::math;
use crate::rng::Stream;
use crate::scores::{ScoreKind, ScoreVector};

pub const DEFAULT_XI: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SamplingPlan {
    /// Train on a fixed subset. `kept_indices` is sorted and unique.
    Static { alpha: f64, n: usize, kept_indices: Vec<usize> },
    /// Draw `N` indices i.i.d. from `probs` each epoch and weight example `i`
    /// by `weights[i] = 1 / (N * probs[i])`.
    Online { xi: f64, probs: Vec<f64>, weights: Vec<f64> },
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        match self {
            SamplingPlan::Static { n, .. } => *n,
            SamplingPlan::Online { probs, .. } => probs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_static(&self) -> bool {
        matches!(self, SamplingPlan::Static { .. })
    }

    pub fn kept_indices(&self) -> Option<&[usize]> {
        match self {
            SamplingPlan::Static { kept_indices, .. } => Some(kept_indices),
            SamplingPlan::Online { .. } => None,
        }
    }

    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            SamplingPlan::Online { probs, .. } => Some(probs),
            SamplingPlan::Static { .. } => None,
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            SamplingPlan::Online { weights, .. } => Some(weights),
            SamplingPlan::Static { .. } => None,
        }
    }

    /// Boolean membership mask of a static plan.
    pub fn kept_mask(&self) -> Option<Vec<bool>> {
        let kept = self.kept_indices()?;
        let mut mask = alloc::vec![false; self.len()];
        for &i in kept {
            mask[i] = true;
        }
        Some(mask)
    }

    /// Re-checks the invariants of a plan, e.g. one read from disk.
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingPlan::Static { alpha, n, kept_indices } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(Error::param("alpha", "must lie in (0, 1]"));
                }
                check_dim("kept indices", math::floor_count(*alpha, *n), kept_indices.len())?;
                if kept_indices.windows(2).any(|w| w[0] >= w[1]) || kept_indices.last().is_some_and(|&i| i >= *n) {
                    return Err(Error::param("kept_indices", "must be sorted, unique and below N"));
                }
            }
            SamplingPlan::Online { probs, weights, .. } => {
                check_dim("weights", probs.len(), weights.len())?;
                let n = probs.len() as f64;
                if probs.iter().any(|&p| !(p > 0.0)) {
                    return Err(Error::param("probs", "must be strictly positive"));
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::param("probs", "must sum to one"));
                }
                if probs.iter().zip(weights).any(|(p, w)| (w * n * p - 1.0).abs() > 1e-9) {
                    return Err(Error::param("weights", "must equal 1 / (N * probs)"));
                }
            }
        }
        Ok(())
    }
}

/// Indices ordered by descending score, ties by ascending index.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Sorted indices of the `m` largest scores.
pub fn top_count(scores: &ScoreVector, m: usize) -> Vec<usize> {
    let mut kept = descending_order(scores.values());
    kept.truncate(m);
    kept.sort_unstable();
    kept
}

/// Sorted indices of the `m` smallest scores under the same total order as
/// [`top_count`], so that `top_count(s, N - m)` and `bottom_count(s, m)`
/// partition the index set.
pub fn bottom_count(scores: &ScoreVector, m: usize) -> Vec<usize> {
    let order = descending_order(scores.values());
    let mut kept = order[order.len() - m.min(order.len())..].to_vec();
    kept.sort_unstable();
    kept
}

pub fn select_top_alpha(scores: &ScoreVector, alpha: f64) -> Result<SamplingPlan> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", "must lie in (0, 1]"));
    }
    let n = scores.len();
    Ok(SamplingPlan::Static {
        alpha,
        n,
        kept_indices: top_count(scores, math::floor_count(alpha, n)),
    })
}

/// `q_i ∝ s_i + xi * mean(s)`.
pub fn online_distribution(scores: &ScoreVector, xi: f64) -> Result<SamplingPlan> {
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::param("xi", "must be positive"));
    }
    let s = scores.values();
    if s.is_empty() {
        return Err(Error::param("scores", "empty score vector"));
    }
    if s.iter().any(|&v| v < 0.0) {
        return Err(Error::param("scores", "importance masses must be nonnegative"));
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let masses: Vec<f64> = s.iter().map(|&v| v + xi * mean).collect();
    from_masses(&masses, xi)
}

/// Normalizes strictly positive masses into an online plan.
pub fn from_masses(masses: &[f64], xi: f64) -> Result<SamplingPlan> {
    if masses.is_empty() {
        return Err(Error::param("masses", "empty mass vector"));
    }
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::param("masses", "must be finite and nonnegative"));
    }
    if masses.contains(&0.0) {
        return Err(Error::Degenerate("some examples would never be sampled"));
    }
    let total: f64 = masses.iter().sum();
    let n = masses.len() as f64;
    let probs: Vec<f64> = masses.iter().map(|m| m / total).collect();
    let weights = probs.iter().map(|p| 1.0 / (n * p)).collect();
    Ok(SamplingPlan::Online { xi, probs, weights })
}

/// `floor(base / alpha)` epochs keep the number of SGD steps on an
/// `alpha`-subset equal to `base` full epochs.
pub fn step_parity_epochs(base_epochs: usize, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", "must lie in (0, 1]"));
    }
    let v = base_epochs as f64 / alpha;
    Ok(libm::floor(v + 1e-9 * (1.0 + v)) as usize)
}

/// `N` i.i.d. draws from the plan's distribution.
pub fn weighted_epoch_indices(plan: &SamplingPlan, rng: &mut Stream) -> Result<Vec<usize>> {
    let probs = plan
        .probs()
        .ok_or_else(|| Error::param("plan", "weighted draws need an online plan"))?;
    let dist = WeightedIndex::new(probs).map_err(|_| Error::Degenerate("sampling weights"))?;
    Ok((0..probs.len()).map(|_| dist.sample(rng)).collect())
}

/// `(1/|B|) sum_{i in B} zeta_i grad f_i(w)`; returns the weighted mean loss.
pub fn unbiased_batch_gradient(
    model: &TrainedModel,
    data: &Observed,
    batch: &[usize],
    plan: &SamplingPlan,
    out: &mut [f64],
) -> Result<f64> {
    let weights = plan
        .weights()
        .ok_or_else(|| Error::param("plan", "weighted gradients need an online plan"))?;
    check_dim("plan length", data.len(), weights.len())?;
    if batch.iter().any(|&i| i >= weights.len()) {
        return Err(Error::param("batch", "index outside plan"));
    }
    learners::batch_gradient(model, data, batch, |i| weights[i], out)
}

/// `(1 - k) / N + k * s_i`.
pub fn uniform_mix(scores: &ScoreVector, k: f64) -> Result<ScoreVector> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::param("k", "must lie in [0, 1]"));
    }
    let s = scores.values();
    if s.iter().any(|&v| v < 0.0) {
        return Err(Error::param("scores", "importance masses must be nonnegative"));
    }
    if k == 1.0 && s.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all-zero scores with no uniform component"));
    }
    let n = s.len() as f64;
    let masses = s.iter().map(|&v| (1.0 - k) / n + k * v).collect();
    ScoreVector::new(masses, ScoreKind::UniformMix(k))
}

impl EpochSampler for SamplingPlan {
    fn epoch_indices(&self, n: usize, rng: &mut Stream) -> Vec<usize> {
        match self {
            SamplingPlan::Static { kept_indices, .. } => {
                let mut idx = kept_indices.clone();
                idx.shuffle(rng);
                idx
            }
            SamplingPlan::Online { .. } => {
                debug_assert_eq!(n, self.len());
                weighted_epoch_indices(self, rng).expect("online plan")
            }
        }
    }

    fn draws_per_epoch(&self, n: usize) -> usize {
        match self {
            SamplingPlan::Static { kept_indices, .. } => kept_indices.len(),
            SamplingPlan::Online { .. } => n,
        }
    }

    fn weight(&self, i: usize) -> f64 {
        match self {
            SamplingPlan::Static { .. } => 1.0,
            SamplingPlan::Online { weights, .. } => weights[i],
        }
    }
}
