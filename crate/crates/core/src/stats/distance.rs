use serde::{Deserialize, Serialize};

use super::normal::normal_cdf;
use crate::error::{Error, Result};

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Config("no samples".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("samples contain NaN".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Kolmogorov distance `sup_x |F_R(x) - Phi(x)|` of the empirical CDF.
pub fn ks_distance(samples: &[f64]) -> Result<f64> {
    let s = sorted(samples)?;
    let r = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let p = normal_cdf(x);
        acc.max((((i + 1) as f64) / r - p).abs()).max((i as f64 / r - p).abs())
    }))
}

/// Wasserstein-1 distance between two equal-size empirical measures on the line.
pub fn w1_sorted(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(w1_with_error(a, b)?.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1Estimate {
    pub value: f64,
    /// Linearized standard error treating the two samples as independent.
    pub std_error: f64,
    pub n: usize,
}

/// `W1` with the delta-method standard error of `(1/n) sum s_i (a_(i) - b_(i))`,
/// `s_i = sign(a_(i) - b_(i))`, taking the signs as fixed.
pub fn w1_with_error(a: &[f64], b: &[f64]) -> Result<W1Estimate> {
    if a.len() != b.len() {
        return Err(Error::Config(format!("sample sizes differ: {} vs {}", a.len(), b.len())));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let n = a.len() as f64;
    let mut sum = 0.0;
    let (mut ma, mut mb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(&b) {
        let s = if x >= y { 1.0 } else { -1.0 };
        sum += (x - y).abs();
        ma += s * x;
        mb += s * y;
    }
    let (ma, mb) = (ma / n, mb / n);
    let (mut va, mut vb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(&b) {
        let s = if x >= y { 1.0 } else { -1.0 };
        va += (s * x - ma).powi(2);
        vb += (s * y - mb).powi(2);
    }
    let denom = (n - 1.0).max(1.0);
    let std_error = ((va / denom + vb / denom) / n).sqrt();
    Ok(W1Estimate { value: sum / n, std_error, n: a.len() })
}

/// `W1(N(mu, s_a^2), N(mu, s_b^2)) = sqrt(2/pi) |s_a - s_b|`.
pub fn gaussian_w1(sd_a: f64, sd_b: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (sd_a - sd_b).abs()
}
