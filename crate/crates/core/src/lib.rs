//! Stochastic gradient Langevin dynamics, its diffusion approximation,
//! Stein-equation solvers and the self-normalized statistics built on them.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases at the bottom fix the common choices.

// `!(x > 0)` style guards are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod problems;
pub mod scalar;
pub mod stats;
pub mod stein;

pub use error::{Error, Result};

pub type GaussianMean64 = problems::GaussianMean<f64>;
pub type GaussianMean32 = problems::GaussianMean<f32>;
pub type PerturbedQuadratic64 = problems::PerturbedQuadratic<f64>;
pub type PerturbedQuadratic32 = problems::PerturbedQuadratic<f32>;
pub type TestFunction64 = problems::TestFunction<f64>;
pub type ChainConfig64 = dynamics::ChainConfig<f64>;
pub type Trajectory64 = dynamics::Trajectory<f64>;
pub type Trajectory32 = dynamics::Trajectory<f32>;
pub type Matrix64 = matrix::Matrix<f64>;
