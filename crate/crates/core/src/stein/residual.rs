use serde::{Deserialize, Serialize};

use super::{Backend, SteinField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problems::{Problem, TestFunction};
use crate::scalar::{dot, Real};

/// Tolerance applied to analytic fields in [`stein_residual_check`].
pub const ANALYTIC_RESIDUAL_TOLERANCE: f64 = 1e-9;

/// `L f(x) = <-grad P(x), grad f(x)> + 1/2 <eta Sigma(x) + delta I, hess f(x)>_HS`.
pub fn generator<T: Real, F: SteinField<T> + ?Sized, P: Problem<T> + ?Sized>(
    field: &F,
    problem: &P,
    eta: T,
    delta: T,
    x: &[T],
) -> Result<T> {
    let d = problem.dim();
    let mut grad_p = vec![T::zero(); d];
    let mut grad_f = vec![T::zero(); d];
    let mut hess = Matrix::zeros(d);
    let mut q2 = Matrix::zeros(d);
    problem.grad_p(x, &mut grad_p);
    field.grad_f(x, &mut grad_f)?;
    field.hess_f(x, &mut hess)?;
    problem.sigma(x, &mut q2);
    q2.scale(eta);
    q2.add_scaled_identity(delta);
    Ok(-dot(&grad_p, &grad_f) + T::lit(0.5) * q2.hs_inner(&hess))
}

/// Symmetrized central differences of `grad f`.
pub fn stein_hessian_fd<T: Real, F: SteinField<T> + ?Sized>(field: &F, x: &[T], eps: T) -> Result<Matrix<T>> {
    if !(eps > T::zero()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let d = x.len();
    let mut out = Matrix::zeros(d);
    let mut plus = vec![T::zero(); d];
    let mut minus = vec![T::zero(); d];
    let mut y = x.to_vec();
    for j in 0..d {
        y[j] = x[j] + eps;
        field.grad_f(&y, &mut plus)?;
        y[j] = x[j] - eps;
        field.grad_f(&y, &mut minus)?;
        y[j] = x[j];
        for i in 0..d {
            out[(i, j)] = (plus[i] - minus[i]) / (T::lit(2.0) * eps);
        }
    }
    out.symmetrize();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub backend: Backend,
    pub n_points: usize,
    /// `max |L f(x) - h(x) + pi(h)|` over the audited points.
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Audits the Stein equation `L f = h - pi(h)` at the given points.
pub fn stein_residual_check<T: Real, F: SteinField<T> + ?Sized, P: Problem<T> + ?Sized>(
    field: &F,
    problem: &P,
    h: &TestFunction<T>,
    eta: T,
    delta: T,
    points: &[Vec<T>],
) -> Result<ResidualReport> {
    if !field.has_hessian() {
        return Err(Error::MissingHessian);
    }
    let mut worst = 0.0f64;
    for x in points {
        let lf = generator(field, problem, eta, delta, x)?;
        let r = (lf - h.evaluate(x) + field.pi_h()).abs().as_f64();
        worst = if r.is_nan() { f64::NAN } else { worst.max(r) };
    }
    let tolerance = match field.backend() {
        Backend::Analytic => ANALYTIC_RESIDUAL_TOLERANCE,
        _ => field.tolerance().as_f64(),
    };
    Ok(ResidualReport {
        backend: field.backend(),
        n_points: points.len(),
        max_residual: worst,
        tolerance,
        pass: worst <= tolerance,
    })
}
