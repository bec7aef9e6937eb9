use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::{dot, Real};
use crate::stein::SteinField;

use super::statistics::y_eta;

/// Checkpoints `{0, m/4, m/2, 3m/4, m-1}` without duplicates.
pub fn checkpoints(m: usize) -> Vec<usize> {
    let mut ks = vec![0, m / 4, m / 2, 3 * m / 4, m.saturating_sub(1)];
    ks.dedup();
    ks
}

/// Sample mean and variance with their standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    /// `sqrt((m4 - s^4) / n)` with `m4` the fourth central moment.
    pub variance_se: f64,
}

pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.len() < 2 {
        return Err(Error::Config("need at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let c = v - mean;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    let variance = m2 / (n - 1.0);
    let m4 = m4 / n;
    let s2 = m2 / n;
    Ok(Moments {
        n: values.len(),
        mean,
        mean_se: (variance / n).sqrt(),
        variance,
        variance_se: ((m4 - s2 * s2).max(0.0) / n).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentPoint {
    pub k: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentCurve {
    pub gamma: f64,
    pub replications: usize,
    pub points: Vec<ExpMomentPoint>,
    /// Some `exp(gamma |w|^2)` overflowed; the curve is unusable at this `gamma`.
    pub overflow: bool,
    /// Weighted least-squares slope of `mean` against `k`, and its standard error.
    pub slope: f64,
    pub slope_se: f64,
}

impl ExpMomentCurve {
    /// Slope within `z` standard errors of zero.
    pub fn flat(&self, z: f64) -> bool {
        !self.overflow && self.slope.abs() <= z * self.slope_se
    }
}

/// Running sums of `exp(gamma |w_k|^2)` at fixed checkpoints across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentAccumulator {
    gamma: f64,
    ks: Vec<usize>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: usize,
    overflow: bool,
}

impl ExpMomentAccumulator {
    pub fn new(gamma: f64, ks: Vec<usize>) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be non-negative, got {gamma}")));
        }
        let len = ks.len();
        Ok(Self { gamma, ks, sum: vec![0.0; len], sum_sq: vec![0.0; len], n: 0, overflow: false })
    }

    pub fn checkpoints(&self) -> &[usize] {
        &self.ks
    }

    /// Per-checkpoint values `exp(gamma |w_k|^2)` for one chain.
    pub fn values<T: Real>(&self, state_at: impl Fn(usize) -> Vec<T>) -> Vec<f64> {
        self.ks
            .iter()
            .map(|&k| {
                let w = state_at(k);
                (self.gamma * dot(&w, &w).as_f64()).exp()
            })
            .collect()
    }

    /// Adds one replication's checkpoint values.
    pub fn push(&mut self, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                self.overflow = true;
            }
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        self.n += 1;
    }

    pub fn finish(&self) -> Result<ExpMomentCurve> {
        if self.n < 2 {
            return Err(Error::Config("exponential-moment curve needs at least two replications".into()));
        }
        let n = self.n as f64;
        let points: Vec<ExpMomentPoint> = self
            .ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mean = self.sum[i] / n;
                let var = ((self.sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
                ExpMomentPoint { k, mean, std_error: (var / n).sqrt() }
            })
            .collect();
        let (slope, slope_se) = weighted_slope(&points);
        Ok(ExpMomentCurve { gamma: self.gamma, replications: self.n, points, overflow: self.overflow, slope, slope_se })
    }
}

/// Weighted least squares of `mean` on `k` with weights `1 / se^2`.
fn weighted_slope(points: &[ExpMomentPoint]) -> (f64, f64) {
    if points.len() < 2 {
        return (0.0, f64::INFINITY);
    }
    let floor = points.iter().map(|p| p.std_error).fold(0.0, f64::max).max(f64::MIN_POSITIVE) * 1e-6;
    let (mut sw, mut swx, mut swy) = (0.0, 0.0, 0.0);
    for p in points {
        let w = 1.0 / p.std_error.max(floor).powi(2);
        sw += w;
        swx += w * p.k as f64;
        swy += w * p.mean;
    }
    let (xbar, ybar) = (swx / sw, swy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for p in points {
        let w = 1.0 / p.std_error.max(floor).powi(2);
        sxx += w * (p.k as f64 - xbar).powi(2);
        sxy += w * (p.k as f64 - xbar) * (p.mean - ybar);
    }
    if sxx == 0.0 {
        return (0.0, f64::INFINITY);
    }
    (sxy / sxx, (1.0 / sxx).sqrt())
}

/// `E exp(gamma |w_k|^2)` at the checkpoints of `m`, averaged over trajectories.
pub fn exp_moment_curve<T: Real>(trajectories: &[Trajectory<T>], gamma: f64) -> Result<ExpMomentCurve> {
    let m = trajectories.first().map(|t| t.len()).unwrap_or(0);
    if m == 0 || trajectories.iter().any(|t| t.len() != m) {
        return Err(Error::Config("trajectories must be non-empty and of equal length".into()));
    }
    let mut acc = ExpMomentAccumulator::new(gamma, checkpoints(m))?;
    for t in trajectories {
        let v = acc.values(|k| t.state(k).to_vec());
        acc.push(&v);
    }
    acc.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub replications: usize,
    pub mean: f64,
    /// `(x', P(|Y - mean Y| >= x'))`.
    pub exceedance: Vec<(f64, f64)>,
    pub monotone: bool,
}

/// Empirical tail of `|Y - mean(Y)|` across replications.
pub fn concentration_from_values(values: &[f64], x_grid: &[f64]) -> Result<ConcentrationReport> {
    if values.is_empty() {
        return Err(Error::Config("no replications".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut grid = x_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let exceedance: Vec<(f64, f64)> =
        grid.iter().map(|&x| (x, values.iter().filter(|&&v| (v - mean).abs() >= x).count() as f64 / n)).collect();
    let monotone = exceedance.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(ConcentrationReport { replications: values.len(), mean, exceedance, monotone })
}

/// Concentration of the normalizer `y_eta` across trajectories.
pub fn variance_concentration_check<T: Real, F: SteinField<T> + ?Sized>(
    trajectories: &[Trajectory<T>],
    field: &F,
    x_grid: &[f64],
) -> Result<ConcentrationReport> {
    let ys = trajectories.iter().map(|t| y_eta(t, field).map(|y| y.as_f64())).collect::<Result<Vec<_>>>()?;
    concentration_from_values(&ys, x_grid)
}
