//! Solutions `f` of the Stein (Poisson) equation `h - pi(h) = L f`, where `L`
//! is the generator of the diffusion approximation
//! `L g = <-grad P, grad g> + 1/2 <eta Sigma + delta I, hess g>_HS`.

mod analytic;
mod grid;
mod monte_carlo;
mod residual;

pub use analytic::{analytic_stein_ou, AnalyticOuField};
pub use grid::{grid_field, GridField, GridSpec};
pub use monte_carlo::{
    default_horizon, estimate_pi_h, stein_f_mc, stein_grad_mc, McEstimate, McSteinConfig, McSteinField,
};
pub use residual::{generator, stein_hessian_fd, stein_residual_check, ResidualReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// How a field's values are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Analytic,
    MonteCarlo,
    Grid,
}

/// An evaluable Stein solution with its derivatives.
pub trait SteinField<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn backend(&self) -> Backend;

    /// `pi(h)` the field was built against.
    fn pi_h(&self) -> T;

    /// Absolute tolerance of one evaluation (zero for analytic fields).
    fn tolerance(&self) -> T;

    fn f(&self, x: &[T]) -> Result<T>;

    fn grad_f(&self, x: &[T], out: &mut [T]) -> Result<()>;

    fn has_hessian(&self) -> bool {
        false
    }

    fn hess_f(&self, _x: &[T], _out: &mut Matrix<T>) -> Result<()> {
        Err(Error::MissingHessian)
    }

    /// True when `hess f` does not depend on `x`.
    fn hessian_is_constant(&self) -> bool {
        false
    }
}

impl<T: Real, F: SteinField<T> + ?Sized> SteinField<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn backend(&self) -> Backend {
        (**self).backend()
    }
    fn pi_h(&self) -> T {
        (**self).pi_h()
    }
    fn tolerance(&self) -> T {
        (**self).tolerance()
    }
    fn f(&self, x: &[T]) -> Result<T> {
        (**self).f(x)
    }
    #[inline]
    fn grad_f(&self, x: &[T], out: &mut [T]) -> Result<()> {
        (**self).grad_f(x, out)
    }
    fn has_hessian(&self) -> bool {
        (**self).has_hessian()
    }
    fn hess_f(&self, x: &[T], out: &mut Matrix<T>) -> Result<()> {
        (**self).hess_f(x, out)
    }
    fn hessian_is_constant(&self) -> bool {
        (**self).hessian_is_constant()
    }
}
