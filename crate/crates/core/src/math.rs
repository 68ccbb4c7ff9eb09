//! Float helpers that work without `std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// `floor(x * n)` as a count, tolerant of representation error such as
/// `0.29 * 100 = 28.999999999999996`.
#[inline]
pub fn floor_count(fraction: f64, n: usize) -> usize {
    let v = fraction * n as f64;
    let f = libm::floor(v + 1e-9 * (1.0 + v));
    if f <= 0.0 {
        0
    } else {
        f as usize
    }
}

/// Numerically stable `log(sum(exp(z)))`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + ln(z.iter().map(|&v| exp(v - m)).sum::<f64>())
}

pub fn softmax(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = exp(v - m);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    sqrt(a.iter().map(|v| v * v).sum())
}
