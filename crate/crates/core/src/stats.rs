//! Small descriptive statistics used across modules.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

pub fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Biased (1/n) variance.
pub fn population_variance(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
}

/// Unbiased (1/(n-1)) standard deviation.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some(math::sqrt(ss / (v.len() - 1) as f64))
}

/// Linear-interpolation quantile (type 7), `q` in `[0, 1]`.
pub fn quantile(v: &[f64], q: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::UndefinedStatistic("quantile of an empty set"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param("q", "quantile level outside [0, 1]"));
    }
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(s.len() - 1);
    let frac = pos - lo as f64;
    Ok(s[lo] + (s[hi] - s[lo]) * frac)
}

pub fn median(v: &[f64]) -> Result<f64> {
    quantile(v, 0.5)
}

/// Masked selection helper.
pub fn select(values: &[f64], mask: &[bool], want: bool) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .map(|(&v, _)| v)
        .collect()
}
