//! Small numeric helpers shared across modules.

use crate::error::{Error, Result};

/// Left-continuous empirical quantile: the smallest observed `v` with
/// `#{y_i <= v} / n >= tau`. Always returns a member of `values`.
pub fn weighted_quantile(values: &[f64], tau: f64) -> Result<f64> {
    quantile_with_weights(values, None, tau)
}

/// As [`weighted_quantile`], with optional nonnegative weights: the smallest
/// observed `v` whose cumulative weight share reaches `tau`.
pub fn quantile_with_weights(values: &[f64], weights: Option<&[f64]>, tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            row: values.iter().position(|v| !v.is_finite()).unwrap() + 1,
            field: "values",
        });
    }
    let Some(w) = weights else {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        // Smallest 1-based rank j with j / n >= tau, computed by comparison so
        // that e.g. tau = 0.7, n = 10 lands on rank 7 despite rounding in 0.7 * 10.
        let mut j = ((tau * n as f64).ceil() as usize).clamp(1, n);
        while j > 1 && (j - 1) as f64 / n as f64 >= tau {
            j -= 1;
        }
        while j < n && (j as f64 / n as f64) < tau {
            j += 1;
        }
        return Ok(sorted[j - 1]);
    };
    if w.len() != values.len() {
        return Err(Error::LengthMismatch {
            field: "weights",
            expected: values.len(),
            found: w.len(),
        });
    }
    if w.iter().any(|&wi| !wi.is_finite() || wi < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeightMass);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut acc = 0.0;
    let mut k = 0;
    while k < order.len() {
        // all tied values enter the CDF together
        let v = values[order[k]];
        while k < order.len() && values[order[k]] == v {
            acc += w[order[k]];
            k += 1;
        }
        if acc / total >= tau {
            return Ok(v);
        }
    }
    Ok(values[*order.last().unwrap()])
}

/// Sample median, averaging the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance; NaN with fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Chan et al. parallel merge.
    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count * other.count) as f64 / total as f64;
        self.count = total;
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}
