//! The SGLD chain, the Euler-Maruyama discretization of its diffusion
//! approximation, and the random-stream plumbing both rely on.

mod sde;
mod sgld;
mod sqrt;
mod stream;

pub use sde::{em_step, grid_steps, sde_path, sde_path_with_stream, EulerMaruyama, SdePath};
pub use sgld::{
    default_burn_in, replay, run_chain, run_chain_streaming, sgld_step, ChainConfig, NoiseLog, SgldKernel, Trajectory,
    DEFAULT_BURN_IN_FACTOR, DIVERGENCE_THRESHOLD,
};
pub use sqrt::psd_sqrt;
pub use stream::{derive_seed, derive_stream, Stream};
