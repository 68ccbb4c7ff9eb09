//! Labeled datasets, the two-cluster synthetic benchmark, and label-noise
//! injection with ground-truth tracking.
//!
//! A [`LabeledDataset`] is split into the part a training pipeline may see
//! ([`Observed`]: features, possibly corrupted labels, class count) and the
//! part only metrics may read ([`GroundTruth`]: clean labels and the
//! corruption mask). Learners and scores take `&Observed` and so cannot leak
//! the mask.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::learners::TrainedModel;
use crate::math;
use crate::matrix::Matrix;
use crate::rng;

/// What a training pipeline is allowed to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    features: Matrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Observed {
    pub fn new(features: Matrix<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_dim("labels", features.rows(), labels.len())?;
        if num_classes == 0 {
            return Err(Error::param("num_classes", "must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::param(
                "labels",
                alloc::format!("label {bad} outside [0, {num_classes})"),
            ));
        }
        Ok(Observed {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Pre-corruption labels and the corruption mask. Read by metrics only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    clean_labels: Vec<usize>,
    corrupt_mask: Vec<bool>,
}

impl GroundTruth {
    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn corrupt_mask(&self) -> &[bool] {
        &self.corrupt_mask
    }

    pub fn num_corrupt(&self) -> usize {
        self.corrupt_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    observed: Observed,
    truth: GroundTruth,
}

impl LabeledDataset {
    /// A clean dataset: `clean_labels = labels`, empty corruption mask.
    pub fn new(features: Matrix<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = labels.len();
        let truth = GroundTruth {
            clean_labels: labels.clone(),
            corrupt_mask: alloc::vec![false; n],
        };
        Ok(LabeledDataset {
            observed: Observed::new(features, labels, num_classes)?,
            truth,
        })
    }

    /// Reassembles a dataset from observed labels and clean labels; the mask
    /// is recomputed so that `mask[i] <=> labels[i] != clean[i]`.
    pub fn with_ground_truth(
        features: Matrix<f64>,
        labels: Vec<usize>,
        clean_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        check_dim("clean labels", labels.len(), clean_labels.len())?;
        if clean_labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::param("clean_labels", "label outside class range"));
        }
        let corrupt_mask = labels
            .iter()
            .zip(&clean_labels)
            .map(|(a, b)| a != b)
            .collect();
        Ok(LabeledDataset {
            observed: Observed::new(features, labels, num_classes)?,
            truth: GroundTruth {
                clean_labels,
                corrupt_mask,
            },
        })
    }

    pub fn observed(&self) -> &Observed {
        &self.observed
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// The dataset as the clean-label oracle sees it.
    pub fn clean_observed(&self) -> Observed {
        Observed {
            features: self.observed.features.clone(),
            labels: self.truth.clean_labels.clone(),
            num_classes: self.observed.num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.observed.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.observed.labels
    }

    pub fn num_classes(&self) -> usize {
        self.observed.num_classes
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let pick = |v: &[usize]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        LabeledDataset {
            observed: Observed {
                features: self.observed.features.select_rows(indices),
                labels: pick(&self.observed.labels),
                num_classes: self.observed.num_classes,
            },
            truth: GroundTruth {
                clean_labels: pick(&self.truth.clean_labels),
                corrupt_mask: indices.iter().map(|&i| self.truth.corrupt_mask[i]).collect(),
            },
        }
    }

    fn relabel(&self, flips: &[(usize, usize)]) -> LabeledDataset {
        let mut labels = self.truth.clean_labels.clone();
        let mut mask = alloc::vec![false; labels.len()];
        for &(i, y) in flips {
            labels[i] = y;
            mask[i] = true;
        }
        LabeledDataset {
            observed: Observed {
                features: self.observed.features.clone(),
                labels,
                num_classes: self.observed.num_classes,
            },
            truth: GroundTruth {
                clean_labels: self.truth.clean_labels.clone(),
                corrupt_mask: mask,
            },
        }
    }
}

/// Two-cluster isotropic Gaussian mixture.
///
/// The common cluster sits at the origin and carries label 0; the rare
/// cluster is centred at distance [`SyntheticSpec::rare_offset`] along the
/// first axis and carries label 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub rare_ratio: f64,
    pub var_rare: f64,
    pub var_common: f64,
    #[serde(default = "default_rare_offset")]
    pub rare_offset: f64,
    pub seed: u64,
}

fn default_rare_offset() -> f64 {
    15.0
}

impl SyntheticSpec {
    /// The heavy-tailed benchmark: N=2000 in R^20, rare variance 400,
    /// common variance 1, rare ratio 0.1.
    pub fn heavy_tailed(seed: u64) -> Self {
        SyntheticSpec {
            n: 2000,
            d: 20,
            rare_ratio: 0.1,
            var_rare: 400.0,
            var_common: 1.0,
            rare_offset: default_rare_offset(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::param("n", "need at least two samples"));
        }
        if self.d == 0 {
            return Err(Error::param("d", "dimension must be positive"));
        }
        if !(self.rare_ratio > 0.0 && self.rare_ratio < 1.0) {
            return Err(Error::param("rare_ratio", "must lie in (0, 1)"));
        }
        if !(self.var_rare > 0.0 && self.var_common > 0.0) {
            return Err(Error::param("variance", "cluster variances must be positive"));
        }
        if !self.rare_offset.is_finite() {
            return Err(Error::param("rare_offset", "must be finite"));
        }
        Ok(())
    }

    pub fn rare_count(&self) -> usize {
        math::floor_count(self.rare_ratio, self.n)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut g = rng::stream(spec.seed, "generation");
    let n_rare = spec.rare_count();
    let rare = Normal::new(0.0, math::sqrt(spec.var_rare)).expect("positive variance");
    let common = Normal::new(0.0, math::sqrt(spec.var_common)).expect("positive variance");

    // Cluster membership is assigned to a random subset of positions so that
    // index-based tie-breaks downstream do not correlate with the label.
    let mut is_rare = alloc::vec![false; spec.n];
    for i in index::sample(&mut g, spec.n, n_rare) {
        is_rare[i] = true;
    }
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for &r in &is_rare {
        for j in 0..spec.d {
            let v = if r {
                let shift = if j == 0 { spec.rare_offset } else { 0.0 };
                shift + rare.sample(&mut g)
            } else {
                common.sample(&mut g)
            };
            data.push(v);
        }
        labels.push(usize::from(r));
    }
    LabeledDataset::new(Matrix::from_vec(spec.n, spec.d, data)?, labels, 2)
}

fn check_rate(nu: f64, num_classes: usize) -> Result<()> {
    if !(0.0..1.0).contains(&nu) {
        return Err(Error::param("nu", "noise rate must lie in [0, 1)"));
    }
    if num_classes < 2 {
        return Err(Error::param("num_classes", "label noise needs at least two classes"));
    }
    Ok(())
}

fn other_class<R: Rng>(clean: usize, num_classes: usize, g: &mut R) -> usize {
    let r = g.random_range(0..num_classes - 1);
    if r >= clean {
        r + 1
    } else {
        r
    }
}

/// Flips a uniformly chosen `floor(nu * N)` subset of the clean labels to a
/// uniformly chosen other class.
pub fn inject_uniform_noise(ds: &LabeledDataset, nu: f64, seed: u64) -> Result<LabeledDataset> {
    check_rate(nu, ds.num_classes())?;
    let n = ds.len();
    let count = math::floor_count(nu, n);
    let mut pick = rng::stream(seed, "flip-selection");
    let mut target = rng::stream(seed, "flip-target");
    let mut chosen: Vec<usize> = index::sample(&mut pick, n, count).into_vec();
    chosen.sort_unstable();
    let clean = ds.truth().clean_labels();
    let flips: Vec<(usize, usize)> = chosen
        .into_iter()
        .map(|i| (i, other_class(clean[i], ds.num_classes(), &mut target)))
        .collect();
    Ok(ds.relabel(&flips))
}

/// Flips the `floor(nu * N)` examples with the largest per-sample gradient
/// norm under `attacker`, evaluated at the clean labels. Equal norms are
/// ordered by ascending index.
pub fn inject_targeted_noise(
    ds: &LabeledDataset,
    nu: f64,
    attacker: &TrainedModel,
    seed: u64,
) -> Result<LabeledDataset> {
    check_rate(nu, ds.num_classes())?;
    check_dim("attacker input", attacker.spec().input_dim, ds.observed().dim())?;
    check_dim("attacker classes", attacker.spec().num_classes, ds.num_classes())?;
    let clean = ds.clean_observed();
    let norms = crate::learners::gradient_norms(attacker, &clean)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let count = math::floor_count(nu, ds.len());
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();
    let mut target = rng::stream(seed, "flip-target");
    let flips: Vec<(usize, usize)> = chosen
        .into_iter()
        .map(|i| (i, other_class(clean.labels()[i], ds.num_classes(), &mut target)))
        .collect();
    Ok(ds.relabel(&flips))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ModelKind, ModelSpec};

    fn small(n: usize, ratio: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n,
            d: 3,
            rare_ratio: ratio,
            var_rare: 4.0,
            var_common: 1.0,
            rare_offset: 10.0,
            seed,
        }
    }

    #[test]
    fn heavy_tailed_has_exactly_200_rare_points() {
        let ds = generate_synthetic(&SyntheticSpec::heavy_tailed(3)).unwrap();
        assert_eq!(ds.len(), 2000);
        assert_eq!(ds.labels().iter().filter(|&&y| y == 1).count(), 200);
        assert_eq!(ds.truth().num_corrupt(), 0);
        assert_eq!(ds.truth().clean_labels(), ds.labels());
    }

    #[test]
    fn symmetric_split_has_both_labels() {
        let ds = generate_synthetic(&small(10, 0.5, 1)).unwrap();
        assert_eq!(ds.labels().iter().filter(|&&y| y == 1).count(), 5);
        assert_eq!(ds.labels().iter().filter(|&&y| y == 0).count(), 5);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(50, 0.2, 9)).unwrap();
        let b = generate_synthetic(&small(50, 0.2, 9)).unwrap();
        let bits = |d: &LabeledDataset| -> Vec<u64> {
            d.features().as_slice().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = generate_synthetic(&small(50, 0.2, 10)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn rare_cluster_variance_matches_spec() {
        let spec = SyntheticSpec::heavy_tailed(5);
        let ds = generate_synthetic(&spec).unwrap();
        for j in 0..spec.d {
            let col: Vec<f64> = (0..ds.len())
                .filter(|&i| ds.labels()[i] == 1)
                .map(|i| *ds.features().get(i, j))
                .collect();
            let v = crate::stats::population_variance(&col).unwrap();
            assert!((v - 400.0).abs() < 100.0, "coordinate {j} variance {v}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&small(1, 0.5, 0)).is_err());
        assert!(generate_synthetic(&small(10, 0.0, 0)).is_err());
        assert!(generate_synthetic(&small(10, 1.0, 0)).is_err());
        let mut s = small(10, 0.5, 0);
        s.var_rare = 0.0;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let ds = generate_synthetic(&small(40, 0.3, 2)).unwrap();
        let noisy = inject_uniform_noise(&ds, 0.0, 1).unwrap();
        assert_eq!(noisy.labels(), ds.labels());
        assert!(noisy.truth().corrupt_mask().iter().all(|&m| !m));
    }

    #[test]
    fn uniform_noise_flips_exact_count() {
        let ds = generate_synthetic(&SyntheticSpec::heavy_tailed(0)).unwrap();
        let noisy = inject_uniform_noise(&ds, 0.25, 11).unwrap();
        let mut flips = 0;
        for i in 0..ds.len() {
            let changed = noisy.labels()[i] != noisy.truth().clean_labels()[i];
            assert_eq!(changed, noisy.truth().corrupt_mask()[i]);
            flips += usize::from(changed);
        }
        assert_eq!(flips, 500);
        assert_eq!(noisy.truth().clean_labels(), ds.labels());
    }

    #[test]
    fn binary_noise_targets_the_other_class() {
        let ds = generate_synthetic(&small(200, 0.4, 3)).unwrap();
        let noisy = inject_uniform_noise(&ds, 0.1, 4).unwrap();
        for i in 0..ds.len() {
            if noisy.truth().corrupt_mask()[i] {
                assert_eq!(noisy.labels()[i], 1 - ds.labels()[i]);
            }
        }
    }

    #[test]
    fn multiclass_noise_never_keeps_the_clean_label() {
        let n = 300;
        let feats = Matrix::filled(n, 2, 0.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let ds = LabeledDataset::new(feats, labels, 5).unwrap();
        let noisy = inject_uniform_noise(&ds, 0.5, 8).unwrap();
        assert_eq!(noisy.truth().num_corrupt(), 150);
        let mut seen = [false; 5];
        for i in 0..n {
            if noisy.truth().corrupt_mask()[i] {
                assert_ne!(noisy.labels()[i], ds.labels()[i]);
                seen[noisy.labels()[i]] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn noise_rate_and_class_count_are_checked() {
        let ds = generate_synthetic(&small(20, 0.5, 0)).unwrap();
        assert!(inject_uniform_noise(&ds, 1.0, 0).is_err());
        assert!(inject_uniform_noise(&ds, -0.1, 0).is_err());
        let one = LabeledDataset::new(Matrix::filled(3, 1, 0.0), alloc::vec![0, 0, 0], 1).unwrap();
        assert!(inject_uniform_noise(&one, 0.1, 0).is_err());
    }

    fn outlier_toy() -> (LabeledDataset, TrainedModel) {
        let feats = Matrix::from_vec(4, 1, alloc::vec![0.1, -0.2, 0.3, 25.0]).unwrap();
        let ds = LabeledDataset::new(feats, alloc::vec![0, 1, 0, 1], 2).unwrap();
        let spec = ModelSpec::linear(ModelKind::LinearSquaredHinge, 1, 2, 0.0);
        let attacker = TrainedModel::from_params(spec, alloc::vec![0.5, -0.5, 0.0, 0.0]).unwrap();
        (ds, attacker)
    }

    #[test]
    fn targeted_noise_flips_the_far_outlier() {
        let (ds, attacker) = outlier_toy();
        // brute-force ranking of the four per-sample gradient norms
        let clean = ds.clean_observed();
        let norms: Vec<f64> = (0..4)
            .map(|i| {
                let mut g = [0.0; 4];
                attacker.sample_gradient(clean.x(i), clean.labels()[i], &mut g);
                math::norm2(&g)
            })
            .collect();
        let argmax = (0..4).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap();
        assert_eq!(argmax, 3);
        let noisy = inject_targeted_noise(&ds, 0.25, &attacker, 0).unwrap();
        assert_eq!(noisy.truth().corrupt_mask(), &[false, false, false, true]);
        assert_eq!(noisy.labels()[3], 0);
    }

    #[test]
    fn targeted_noise_is_deterministic_and_zero_rate_is_identity() {
        let (ds, attacker) = outlier_toy();
        let a = inject_targeted_noise(&ds, 0.5, &attacker, 3).unwrap();
        let b = inject_targeted_noise(&ds, 0.5, &attacker, 3).unwrap();
        assert_eq!(a, b);
        let z = inject_targeted_noise(&ds, 0.0, &attacker, 3).unwrap();
        assert_eq!(z.labels(), ds.labels());
    }

    #[test]
    fn targeted_noise_checks_attacker_dimension() {
        let (ds, _) = outlier_toy();
        let spec = ModelSpec::linear(ModelKind::LinearSquaredHinge, 2, 2, 0.0);
        let wrong = TrainedModel::from_params(spec, alloc::vec![0.0; 6]).unwrap();
        assert!(matches!(
            inject_targeted_noise(&ds, 0.25, &wrong, 0),
            Err(Error::Dimension { .. })
        ));
    }
}
