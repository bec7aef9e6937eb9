use serde::{Deserialize, Serialize};

use super::accumulator::ChainStats;
use crate::scalar::Real;

/// Per-replication record produced by the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: u64,
    pub seed: u64,
    pub config_hash: String,
    pub m: usize,
    pub eta: f64,
    pub delta: f64,
    pub pi_hat: f64,
    pub y_eta: f64,
    pub w_eta: f64,
    pub h_eta: Option<f64>,
    /// `[R1, R2, R3, R4]`.
    pub r_components: Option<[f64; 4]>,
    pub r_residual: Option<f64>,
    /// `sqrt(m eta / delta)(pi_hat - pi_h) - H + (R1 + R2 + R3 + R4)`.
    pub identity_residual: Option<f64>,
    pub scaled_deviation: f64,
    /// `exp(gamma |w_k|^2)` at the exponential-moment checkpoints.
    pub exp_moment: Option<Vec<f64>>,
}

impl ReplicationResult {
    pub fn from_stats<T: Real>(
        index: u64,
        seed: u64,
        config_hash: &str,
        eta: T,
        delta: T,
        stats: &ChainStats<T>,
    ) -> Self {
        Self {
            index,
            seed,
            config_hash: config_hash.to_string(),
            m: stats.m,
            eta: eta.as_f64(),
            delta: delta.as_f64(),
            pi_hat: stats.pi_hat.as_f64(),
            y_eta: stats.y_eta.as_f64(),
            w_eta: stats.w_eta.as_f64(),
            h_eta: stats.h_eta.map(Real::as_f64),
            r_components: stats.remainders.map(|r| [r.r1.as_f64(), r.r2.as_f64(), r.r3.as_f64(), r.r4.as_f64()]),
            r_residual: stats.r_residual.map(Real::as_f64),
            identity_residual: stats.identity_residual().map(Real::as_f64),
            scaled_deviation: stats.scaled_deviation.as_f64(),
            exp_moment: None,
        }
    }
}
