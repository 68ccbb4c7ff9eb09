//! Closed-form separation certificates for rank-variance selection, the
//! mass bounds for magnitude-based sampling, the AUM AUROC bound, and
//! planted-rank Monte-Carlo models that exercise them.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng;
use crate::sampler;
use crate::scores::{self, RankMatrix, ScoreKind, ScoreVector};
use crate::stats;

/// Symbols of the contamination model and the rank assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    /// Width of the high-rank band holding corrupted ranks.
    pub tau: f64,
    /// Probability of a corrupted rank escaping the band.
    pub gamma: f64,
    pub tau_bdry: f64,
    pub alpha_trim: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub v_tail: f64,
}

impl Default for TheoremParams {
    fn default() -> Self {
        TheoremParams {
            n: 1000,
            k: 3,
            delta: 0.05,
            tau: 0.2,
            gamma: 0.05,
            tau_bdry: 0.3,
            alpha_trim: 0.2,
            epsilon: 0.25,
            alpha: 0.25,
            v_tail: 0.01,
        }
    }
}

impl TheoremParams {
    /// Ranges are closed where the formulas stay finite, so that endpoint
    /// cases (`tau = gamma = 0`, `K = 1`) can be evaluated.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("N", "must be positive"));
        }
        if self.k == 0 {
            return Err(Error::param("K", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::param("tau", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", "must lie in [0, 1]"));
        }
        if !(self.tau_bdry >= 0.0) || !self.tau_bdry.is_finite() {
            return Err(Error::param("tau_bdry", "must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.alpha_trim) {
            return Err(Error::param("alpha_trim", "must lie in [0, 1)"));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::param("epsilon", "must lie in [0, 1/2)"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", "must lie in (0, 1]"));
        }
        if !(self.v_tail >= 0.0) || !self.v_tail.is_finite() {
            return Err(Error::param("v_tail", "must be finite and nonnegative"));
        }
        Ok(())
    }

    fn shrink(&self) -> f64 {
        1.0 - 1.0 / self.k as f64
    }

    /// `tau^2 / 4 + gamma`, the structural variance ceiling of bulk ranks.
    pub fn bulk_ceiling(&self) -> f64 {
        self.tau * self.tau / 4.0 + self.gamma
    }
}

/// `sqrt(ln(2N/delta) / (2K))`.
pub fn mcdiarmid_radius(n: usize, k: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", "must lie in (0, 1)"));
    }
    if n == 0 || k == 0 {
        return Err(Error::param("N, K", "must be positive"));
    }
    Ok(math::sqrt(math::ln(2.0 * n as f64 / delta) / (2.0 * k as f64)))
}

/// Upper threshold for the rank variance of bulk corrupted examples.
pub fn theta_star(p: &TheoremParams) -> Result<f64> {
    p.validate()?;
    Ok(p.shrink() * p.bulk_ceiling() + mcdiarmid_radius(p.n, p.k, p.delta)?)
}

/// Lower bound on the rank variance of boundary clean examples.
pub fn boundary_lower(p: &TheoremParams) -> Result<f64> {
    p.validate()?;
    Ok(p.shrink() * p.tau_bdry * p.tau_bdry - mcdiarmid_radius(p.n, p.k, p.delta)?)
}

/// `(1 - 1/K)(tau_bdry^2 - tau^2/4 - gamma)`.
pub fn delta_prime(p: &TheoremParams) -> Result<f64> {
    p.validate()?;
    Ok(p.shrink() * (p.tau_bdry * p.tau_bdry - p.bulk_ceiling()))
}

/// `(alpha_trim * eps / alpha) * min(1, v_tail / (tau^2/4 + gamma))`,
/// clamped to `[0, 1]`. A zero ceiling makes the `min` equal 1 unless
/// `v_tail` is zero as well.
pub fn contamination_cap(p: &TheoremParams) -> Result<f64> {
    p.validate()?;
    let ceiling = p.bulk_ceiling();
    let surviving = if ceiling > 0.0 {
        (p.v_tail / ceiling).min(1.0)
    } else if p.v_tail > 0.0 {
        1.0
    } else {
        0.0
    };
    Ok((p.alpha_trim * p.epsilon / p.alpha * surviving).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub params: TheoremParams,
    pub mcdiarmid_radius: f64,
    pub theta_star: f64,
    pub bdry_lower: f64,
    pub delta_prime: f64,
    /// `delta_prime > 2 * radius`: the threshold strictly separates the
    /// boundary set from the bulk corrupted set.
    pub separated: bool,
    /// Caller's assertion that the boundary set holds at least `alpha * N`
    /// examples.
    pub bdry_covers_subset: bool,
    /// Separation plus coverage: the top-alpha subset holds no bulk
    /// corrupted example and its contamination is at most the cap.
    pub subset_certified: bool,
    pub contamination_cap: f64,
    pub notes: Vec<String>,
}

pub fn separation_and_contamination(p: &TheoremParams, bdry_covers_subset: bool) -> Result<CertificateReport> {
    p.validate()?;
    let radius = mcdiarmid_radius(p.n, p.k, p.delta)?;
    let dp = delta_prime(p)?;
    let separated = dp > 2.0 * radius;
    let mut notes = Vec::new();
    if !separated {
        let needed = min_k_for_separation(p);
        notes.push(match needed {
            Some(k) => alloc::format!("separation needs K >= {k} at these parameters"),
            None => String::from("no K separates: tau_bdry^2 <= tau^2/4 + gamma"),
        });
    }
    if separated && !bdry_covers_subset {
        notes.push(String::from("boundary set smaller than alpha*N: subset claims not certified"));
    }
    if p.bulk_ceiling() == 0.0 && p.v_tail > 0.0 {
        notes.push(String::from("zero bulk ceiling: surviving tail fraction taken as 1"));
    }
    Ok(CertificateReport {
        params: *p,
        mcdiarmid_radius: radius,
        theta_star: theta_star(p)?,
        bdry_lower: boundary_lower(p)?,
        delta_prime: dp,
        separated,
        bdry_covers_subset,
        subset_certified: separated && bdry_covers_subset,
        contamination_cap: contamination_cap(p)?,
        notes,
    })
}

/// Smallest `K` with `delta_prime > 2 * radius`, if any exists.
pub fn min_k_for_separation(p: &TheoremParams) -> Option<usize> {
    let gap = p.tau_bdry * p.tau_bdry - p.bulk_ceiling();
    if !(gap > 0.0) {
        return None;
    }
    let sep = |k: usize| {
        let q = TheoremParams { k, ..*p };
        let r = mcdiarmid_radius(q.n, k, q.delta).ok()?;
        Some(delta_prime(&q).ok()? > 2.0 * r)
    };
    let mut hi = 2usize;
    while !sep(hi)? {
        hi = hi.checked_mul(2)?;
        if hi > 1 << 40 {
            return None;
        }
    }
    let mut lo = hi / 2;
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if sep(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassBounds {
    /// Normalized score mass on the corrupted set.
    pub corrupted_mass: f64,
    /// `eps * s_min^corr / s_max`.
    pub lower_bound: f64,
    /// Corrupted mass over clean mass.
    pub ratio: f64,
    /// `eps / (1 - eps) * s_min^corr / mean^clean`.
    pub ratio_lower: f64,
    pub epsilon: f64,
}

impl MassBounds {
    /// Both inequalities, up to a relative rounding slack of `1e-12`.
    pub fn holds(&self) -> bool {
        // `x >= lb` first: both are infinite when the clean mass is zero
        let ok = |x: f64, lb: f64| x >= lb || x >= lb - 1e-12 * lb.abs();
        ok(self.corrupted_mass, self.lower_bound) && ok(self.ratio, self.ratio_lower)
    }
}

/// Mass that sampling proportionally to `scores` puts on the corrupted set,
/// with its two lower bounds.
pub fn magnitude_mass_bounds(scores: &[f64], corrupt_mask: &[bool]) -> Result<MassBounds> {
    check_dim("corrupt mask", scores.len(), corrupt_mask.len())?;
    if scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::param("scores", "must be finite and nonnegative"));
    }
    let n_corr = corrupt_mask.iter().filter(|&&c| c).count();
    let n_clean = scores.len() - n_corr;
    if n_corr == 0 || n_clean == 0 {
        return Err(Error::UndefinedStatistic("mass bounds need nonempty corrupt and clean sets"));
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all scores are zero"));
    }
    let (mut corr_sum, mut clean_sum, mut corr_min, mut max) = (0.0, 0.0, f64::INFINITY, 0.0f64);
    for (&s, &c) in scores.iter().zip(corrupt_mask) {
        max = max.max(s);
        if c {
            corr_sum += s;
            corr_min = corr_min.min(s);
        } else {
            clean_sum += s;
        }
    }
    let eps = n_corr as f64 / scores.len() as f64;
    let clean_mean = clean_sum / n_clean as f64;
    let ratio = if clean_sum > 0.0 { corr_sum / clean_sum } else { f64::INFINITY };
    let ratio_lower = if corr_min == 0.0 {
        0.0
    } else if clean_mean > 0.0 {
        eps / (1.0 - eps) * corr_min / clean_mean
    } else {
        f64::INFINITY
    };
    Ok(MassBounds {
        corrupted_mass: corr_sum / total,
        lower_bound: eps * corr_min / max,
        ratio,
        ratio_lower,
        epsilon: eps,
    })
}

/// `1 - exp(-delta0^2 / (4 sigma^2 + 2 nu^2))`.
pub fn aum_auroc_bound(delta0: f64, sigma: f64, nu: f64) -> Result<f64> {
    auroc_bound(4.0 * sigma * sigma + 2.0 * nu * nu, delta0, sigma, nu)
}

/// Variant using only marginal trajectory concentration of each residual,
/// `1 - exp(-delta0^2 / (4 sigma^2 + 8 nu^2))`.
pub fn aum_auroc_bound_marginal(delta0: f64, sigma: f64, nu: f64) -> Result<f64> {
    auroc_bound(4.0 * sigma * sigma + 8.0 * nu * nu, delta0, sigma, nu)
}

fn auroc_bound(denom: f64, d: f64, sigma: f64, nu: f64) -> Result<f64> {
    if !(d >= 0.0 && sigma >= 0.0 && nu >= 0.0) || !(d + sigma + nu).is_finite() {
        return Err(Error::param("delta0, sigma, nu", "must be finite and nonnegative"));
    }
    if denom == 0.0 {
        return if d > 0.0 {
            Ok(1.0)
        } else {
            Err(Error::param("delta0", "bound undefined with zero gap and zero noise"))
        };
    }
    Ok(1.0 - math::exp(-d * d / denom))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AurocEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub pairs: usize,
}

/// Empirical `P(A_clean > A_corr)` in a Gaussian model: population AUM
/// drawn as `N(mu, sigma^2)` per side, plus a pair residual `N(0, nu^2)`.
pub fn simulate_aum_auroc(delta0: f64, sigma: f64, nu: f64, pairs: usize, seed: u64) -> Result<AurocEstimate> {
    if pairs == 0 {
        return Err(Error::param("pairs", "must be positive"));
    }
    if !(sigma >= 0.0 && nu >= 0.0) {
        return Err(Error::param("sigma, nu", "must be nonnegative"));
    }
    let mut r = rng::stream(seed, "aum-auroc");
    let mut wins = 0usize;
    for _ in 0..pairs {
        let zc: f64 = StandardNormal.sample(&mut r);
        let zw: f64 = StandardNormal.sample(&mut r);
        let e: f64 = StandardNormal.sample(&mut r);
        let w = delta0 + sigma * (zc - zw) + nu * e;
        wins += usize::from(w > 0.0);
    }
    let p = wins as f64 / pairs as f64;
    Ok(AurocEstimate {
        probability: p,
        std_error: math::sqrt(p * (1.0 - p) / pairs as f64),
        pairs,
    })
}

/// Population model realising the rank assumptions exactly.
///
/// Indices are laid out as bulk corrupted, escaping tail, pinned tail,
/// boundary, easy. Corrupted count is `floor(eps N)` and the tail is
/// `floor(alpha_trim * n_corr)` of it. Of the tail, `floor(n_tail * v_tail /
/// tau_bdry^2)` points follow the boundary two-point law and the rest sit at
/// rank 1, so the mean tail variance never exceeds `v_tail`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub params: TheoremParams,
    pub n_bdry: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedRole {
    Bulk,
    EscapingTail,
    PinnedTail,
    Boundary,
    Easy,
}

impl PlantedModel {
    pub fn n_corrupt(&self) -> usize {
        math::floor_count(self.params.epsilon, self.params.n)
    }

    pub fn n_tail(&self) -> usize {
        math::floor_count(self.params.alpha_trim, self.n_corrupt())
    }

    pub fn n_escaping(&self) -> usize {
        let tb2 = self.params.tau_bdry * self.params.tau_bdry;
        if tb2 == 0.0 {
            return 0;
        }
        let n_tail = self.n_tail();
        (libm::floor(n_tail as f64 * self.params.v_tail / tb2) as usize).min(n_tail)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.tau_bdry > 0.5 {
            return Err(Error::param("tau_bdry", "two-point law on [0, 1] needs tau_bdry <= 1/2"));
        }
        if self.n_corrupt() + self.n_bdry > self.params.n {
            return Err(Error::param("n_bdry", "corrupted plus boundary exceeds N"));
        }
        Ok(())
    }

    pub fn roles(&self) -> Vec<PlantedRole> {
        let n_corr = self.n_corrupt();
        let n_tail = self.n_tail();
        let n_esc = self.n_escaping();
        let n_bulk = n_corr - n_tail;
        (0..self.params.n)
            .map(|i| {
                if i < n_bulk {
                    PlantedRole::Bulk
                } else if i < n_bulk + n_esc {
                    PlantedRole::EscapingTail
                } else if i < n_corr {
                    PlantedRole::PinnedTail
                } else if i < n_corr + self.n_bdry {
                    PlantedRole::Boundary
                } else {
                    PlantedRole::Easy
                }
            })
            .collect()
    }

    fn draw(&self, role: PlantedRole, r: &mut rng::Stream) -> f64 {
        let p = &self.params;
        match role {
            PlantedRole::Bulk => {
                if r.random::<f64>() < p.gamma {
                    (1.0 - p.tau) * r.random::<f64>()
                } else {
                    1.0 - p.tau * r.random::<f64>()
                }
            }
            PlantedRole::EscapingTail | PlantedRole::Boundary => {
                if r.random::<bool>() {
                    0.5 + p.tau_bdry
                } else {
                    0.5 - p.tau_bdry
                }
            }
            PlantedRole::PinnedTail => 1.0,
            PlantedRole::Easy => 0.1 * r.random::<f64>(),
        }
    }

    /// One `N x K` draw of i.i.d.-per-proxy ranks.
    pub fn sample_ranks(&self, r: &mut rng::Stream) -> Matrix<f64> {
        let roles = self.roles();
        let k = self.params.k;
        let mut data = Vec::with_capacity(roles.len() * k);
        for &role in &roles {
            for _ in 0..k {
                data.push(self.draw(role, r));
            }
        }
        Matrix::from_vec(roles.len(), k, data).expect("shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub report: CertificateReport,
    /// Trials with some bulk corrupted variance above `theta_star`.
    pub bulk_violations: usize,
    /// Trials with some boundary variance below the boundary lower bound.
    pub bdry_violations: usize,
    /// Trials where either of the two failed.
    pub joint_violations: usize,
    /// Trials whose top-alpha subset held a bulk corrupted example.
    pub bulk_in_subset_trials: usize,
    /// Trials whose subset contamination exceeded the cap.
    pub cap_exceeded_trials: usize,
    pub max_contamination: f64,
    /// Mean rank variance of boundary examples over all trials.
    pub mean_bdry_variance: f64,
    pub bdry_variance_std_error: f64,
}

impl MonteCarloSummary {
    pub fn joint_violation_rate(&self) -> f64 {
        self.joint_violations as f64 / self.trials as f64
    }
}

/// Draws `trials` rank ensembles from the planted model and checks each
/// conclusion of the certificate on every draw.
pub fn planted_rank_montecarlo(model: &PlantedModel, trials: usize, seed: u64) -> Result<MonteCarloSummary> {
    model.validate()?;
    if trials == 0 {
        return Err(Error::param("trials", "must be positive"));
    }
    let p = &model.params;
    let covers = model.n_bdry >= math::floor_count(p.alpha, p.n);
    let report = separation_and_contamination(p, covers)?;
    let roles = model.roles();
    let m = math::floor_count(p.alpha, p.n);
    let mut s = MonteCarloSummary {
        trials,
        report: report.clone(),
        bulk_violations: 0,
        bdry_violations: 0,
        joint_violations: 0,
        bulk_in_subset_trials: 0,
        cap_exceeded_trials: 0,
        max_contamination: 0.0,
        mean_bdry_variance: 0.0,
        bdry_variance_std_error: 0.0,
    };
    let mut bdry_var_sum = 0.0;
    let mut bdry_var_sq = 0.0;
    let mut bdry_count = 0usize;
    for t in 0..trials {
        let mut r = rng::substream(seed, "planted-trial", t as u64);
        let ranks = model.sample_ranks(&mut r);
        let var = row_variances(&ranks);
        let mut bulk_bad = false;
        let mut bdry_bad = false;
        for (&role, &v) in roles.iter().zip(&var) {
            match role {
                PlantedRole::Bulk => bulk_bad |= v > report.theta_star,
                PlantedRole::Boundary => {
                    bdry_bad |= v < report.bdry_lower;
                    bdry_var_sum += v;
                    bdry_var_sq += v * v;
                    bdry_count += 1;
                }
                _ => {}
            }
        }
        s.bulk_violations += usize::from(bulk_bad);
        s.bdry_violations += usize::from(bdry_bad);
        s.joint_violations += usize::from(bulk_bad || bdry_bad);
        if m > 0 {
            let sv = ScoreVector::new(var, ScoreKind::RankVariance)?;
            let kept = sampler::top_count(&sv, m);
            let bulk_in = kept.iter().any(|&i| roles[i] == PlantedRole::Bulk);
            let corr_in = kept
                .iter()
                .filter(|&&i| matches!(roles[i], PlantedRole::Bulk | PlantedRole::EscapingTail | PlantedRole::PinnedTail))
                .count();
            let frac = corr_in as f64 / m as f64;
            s.bulk_in_subset_trials += usize::from(bulk_in);
            s.cap_exceeded_trials += usize::from(frac > report.contamination_cap);
            s.max_contamination = s.max_contamination.max(frac);
        }
    }
    if bdry_count > 0 {
        let c = bdry_count as f64;
        let mean = bdry_var_sum / c;
        s.mean_bdry_variance = mean;
        // per-example draws within a trial are independent in the planted model
        s.bdry_variance_std_error = math::sqrt(((bdry_var_sq / c - mean * mean).max(0.0)) / c);
    }
    Ok(s)
}

/// Biased (`1/K`) variance of each row.
pub fn row_variances(m: &Matrix<f64>) -> Vec<f64> {
    let k = m.cols() as f64;
    m.iter_rows()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / k;
            row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k
        })
        .collect()
}

/// Empirical counterparts of the assumption parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEstimates {
    pub tau: f64,
    pub gamma: f64,
    /// Median bias-corrected rank variance over the boundary mask.
    pub tau_bdry_sq: f64,
    /// Mean bias-corrected rank variance over the corrupted tail.
    pub v_tail: f64,
    /// Mean rank variance over clean minus mean over corrupted.
    pub empirical_gap: f64,
    pub alpha_trim: f64,
    pub n_bulk: usize,
    pub n_tail: usize,
}

impl AssumptionEstimates {
    /// Fills a parameter set for the certificate calculators.
    pub fn to_params(&self, n: usize, k: usize, delta: f64, epsilon: f64, alpha: f64) -> TheoremParams {
        TheoremParams {
            n,
            k,
            delta,
            tau: self.tau,
            gamma: self.gamma,
            tau_bdry: math::sqrt(self.tau_bdry_sq),
            alpha_trim: self.alpha_trim,
            epsilon,
            alpha,
            v_tail: self.v_tail,
        }
    }
}

/// Estimates the assumption parameters from a rank matrix.
///
/// The corrupted tail is the `floor(alpha_trim * n_corr)` corrupted examples
/// of largest empirical rank variance. `tau` is one minus the
/// `quantile_level` quantile of all bulk ranks and `gamma` the largest
/// per-example fraction of bulk ranks below `1 - tau`. Variances are
/// rescaled by `K / (K - 1)` before estimating population quantities.
pub fn estimate_assumption_params(
    rm: &RankMatrix,
    corrupt_mask: &[bool],
    bdry_mask: &[bool],
    alpha_trim: f64,
    quantile_level: f64,
) -> Result<AssumptionEstimates> {
    let n = rm.num_examples();
    let k = rm.num_proxies();
    check_dim("corrupt mask", n, corrupt_mask.len())?;
    check_dim("boundary mask", n, bdry_mask.len())?;
    if !(0.0..1.0).contains(&alpha_trim) {
        return Err(Error::param("alpha_trim", "must lie in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&quantile_level) {
        return Err(Error::param("quantile_level", "must lie in [0, 1]"));
    }
    let var = scores::rank_variance(rm)?.into_values();
    let correction = k as f64 / (k as f64 - 1.0);
    let mut corrupt: Vec<usize> = (0..n).filter(|&i| corrupt_mask[i]).collect();
    if corrupt.is_empty() {
        return Err(Error::UndefinedStatistic("empty corrupt mask"));
    }
    if !bdry_mask.iter().any(|&b| b) {
        return Err(Error::UndefinedStatistic("empty boundary mask"));
    }
    if corrupt.len() == n {
        return Err(Error::UndefinedStatistic("no clean examples"));
    }
    corrupt.sort_by(|&a, &b| var[a].partial_cmp(&var[b]).unwrap().then(a.cmp(&b)));
    let n_tail = math::floor_count(alpha_trim, corrupt.len());
    let (bulk, tail) = corrupt.split_at(corrupt.len() - n_tail);

    let ranks = rm.ranks();
    let pooled: Vec<f64> = bulk.iter().flat_map(|&i| ranks.row(i).iter().copied()).collect();
    let tau = (1.0 - stats::quantile(&pooled, quantile_level)?).max(0.0);
    let cut = 1.0 - tau;
    let gamma = bulk
        .iter()
        .map(|&i| ranks.row(i).iter().filter(|&&r| r < cut).count() as f64 / k as f64)
        .fold(0.0, f64::max);

    let bdry_var: Vec<f64> = stats::select(&var, bdry_mask, true).iter().map(|v| v * correction).collect();
    let tau_bdry_sq = stats::median(&bdry_var)?;
    let v_tail = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|&i| var[i] * correction).sum::<f64>() / tail.len() as f64
    };
    let clean_mean = stats::mean(&stats::select(&var, corrupt_mask, false)).unwrap_or(0.0);
    let corr_mean = stats::mean(&stats::select(&var, corrupt_mask, true)).unwrap_or(0.0);
    Ok(AssumptionEstimates {
        tau,
        gamma,
        tau_bdry_sq,
        v_tail,
        empirical_gap: clean_mean - corr_mean,
        alpha_trim,
        n_bulk: bulk.len(),
        n_tail,
    })
}

/// Latent-loss model whose rank matrices are exact column permutations.
///
/// Each example has a fixed loss centre and spread; proxy `k` observes
/// `centre + spread * g_ik` with standard normal `g_ik`, and the ranks of
/// those losses form column `k`. Corrupted examples sit stably above every
/// clean one, boundary examples fluctuate, easy examples sit stably low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEnsemble {
    pub n_corrupt: usize,
    pub n_bdry: usize,
    pub n_easy: usize,
    pub corrupt_centre: (f64, f64),
    pub corrupt_spread: f64,
    pub bdry_centre: (f64, f64),
    pub bdry_spread: f64,
    pub easy_centre: (f64, f64),
    pub easy_spread: f64,
}

impl Default for PlantedEnsemble {
    fn default() -> Self {
        PlantedEnsemble {
            n_corrupt: 200,
            n_bdry: 1200,
            n_easy: 600,
            corrupt_centre: (3.0, 4.0),
            corrupt_spread: 0.02,
            bdry_centre: (0.0, 2.0),
            bdry_spread: 1.0,
            easy_centre: (-3.0, -2.0),
            easy_spread: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDraw {
    pub ranks: RankMatrix,
    pub corrupt_mask: Vec<bool>,
    pub bdry_mask: Vec<bool>,
}

impl PlantedEnsemble {
    pub fn len(&self) -> usize {
        self.n_corrupt + self.n_bdry + self.n_easy
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws `k` proxies. Example centres come from stream `"centres"` and
    /// proxy `j` from substream `"proxy"/j`, so the first `k` columns are
    /// shared across different `k`.
    pub fn sample(&self, k: usize, seed: u64) -> Result<PlantedDraw> {
        if k == 0 || self.is_empty() {
            return Err(Error::param("K, N", "must be positive"));
        }
        let n = self.len();
        let mut cr = rng::stream(seed, "centres");
        let mut centres = Vec::with_capacity(n);
        let mut spreads = Vec::with_capacity(n);
        let groups = [
            (self.n_corrupt, self.corrupt_centre, self.corrupt_spread),
            (self.n_bdry, self.bdry_centre, self.bdry_spread),
            (self.n_easy, self.easy_centre, self.easy_spread),
        ];
        for (count, (lo, hi), spread) in groups {
            for _ in 0..count {
                centres.push(if hi > lo { cr.random_range(lo..hi) } else { lo });
                spreads.push(spread);
            }
        }
        let mut columns = Vec::with_capacity(k);
        for j in 0..k {
            let mut pr = rng::substream(seed, "proxy", j as u64);
            let noise = Normal::new(0.0, 1.0).expect("unit normal");
            let losses: Vec<f64> = centres
                .iter()
                .zip(&spreads)
                .map(|(&c, &s)| c + s * noise.sample(&mut pr))
                .collect();
            columns.push(losses);
        }
        let ids = (0..k).map(|j| alloc::format!("planted-{j}")).collect();
        let ranks = RankMatrix::from_losses(&columns, ids, 0)?;
        let corrupt_mask = (0..n).map(|i| i < self.n_corrupt).collect();
        let bdry_mask = (0..n)
            .map(|i| i >= self.n_corrupt && i < self.n_corrupt + self.n_bdry)
            .collect();
        Ok(PlantedDraw {
            ranks,
            corrupt_mask,
            bdry_mask,
        })
    }
}
