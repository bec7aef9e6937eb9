//! Statistics of SGLD trajectories: empirical averages, the self-normalized
//! statistic, the martingale/remainder decomposition, tail ratios and
//! distances to the normal law.

mod accumulator;
mod diagnostics;
mod distance;
mod normal;
mod replication;
mod statistics;
mod tail;

pub use accumulator::{ChainAccumulator, ChainStats, Detail};
pub use diagnostics::{
    checkpoints, concentration_from_values, exp_moment_curve, moments, variance_concentration_check,
    ConcentrationReport, ExpMomentAccumulator, ExpMomentCurve, ExpMomentPoint, Moments,
};
pub use distance::{gaussian_w1, ks_distance, w1_sorted, w1_with_error, W1Estimate};
pub use normal::{normal_cdf, normal_sf};
pub use replication::ReplicationResult;
pub use statistics::{h_eta, pi_hat, r_components, r_residual, self_normalized, w_eta, y_eta, Remainders};
pub use tail::{mirrored_tail_ratio_table, tail_ratio_table, TailRow, TailTable};
