use serde::{Deserialize, Serialize};

use super::normal::normal_sf;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub x: f64,
    /// Empirical `P(W > x)` with strict inequality.
    pub p_hat: f64,
    pub normal_tail: f64,
    pub ratio: f64,
    /// Binomial standard error of the ratio.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub n_samples: usize,
    /// True for the table of `-W`.
    pub mirrored: bool,
    pub rows: Vec<TailRow>,
}

impl TailTable {
    /// Largest `|ratio - 1|` over the grid.
    pub fn max_deviation(&self) -> f64 {
        self.rows.iter().map(|r| (r.ratio - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Empirical tail ratios `P(W > x) / (1 - Phi(x))` over `x_grid`.
pub fn tail_ratio_table(samples: &[f64], x_grid: &[f64]) -> Result<TailTable> {
    build(samples, x_grid, false)
}

/// The same table for `-W`.
pub fn mirrored_tail_ratio_table(samples: &[f64], x_grid: &[f64]) -> Result<TailTable> {
    build(samples, x_grid, true)
}

fn build(samples: &[f64], x_grid: &[f64], mirrored: bool) -> Result<TailTable> {
    if samples.is_empty() || x_grid.is_empty() {
        return Err(Error::Config("tail table needs samples and a non-empty grid".into()));
    }
    let r = samples.len() as f64;
    let rows = x_grid
        .iter()
        .map(|&x| {
            let count = samples.iter().filter(|&&w| if mirrored { -w > x } else { w > x }).count();
            let p_hat = count as f64 / r;
            let normal_tail = normal_sf(x);
            TailRow {
                x,
                p_hat,
                normal_tail,
                ratio: p_hat / normal_tail,
                stderr: (p_hat * (1.0 - p_hat) / r).sqrt() / normal_tail,
            }
        })
        .collect();
    Ok(TailTable { n_samples: samples.len(), mirrored, rows })
}
