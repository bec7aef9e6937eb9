//! Stochastic loss models `psi(w, zeta)` and their derived objects.
//!
//! Built-in problems are illustrative instances chosen to satisfy the
//! Lipschitz, dissipativity and sub-Gaussian assumptions; they are not taken
//! from any published experiment.

mod builtin;
mod test_function;
mod validators;

pub use builtin::{AnyProblem, GaussianMean, PerturbedQuadratic, ProblemSpec};
pub use test_function::{TestFunction, TestFunctionSpec, TestKind};
pub use validators::{
    check_dissipativity, check_lipschitz, check_subgaussian, sample_ball, SubGaussianReport, ValidatorReport,
    DEFAULT_RADIUS, DEFAULT_SUBGAUSSIAN_GAMMA,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::{derive_stream, Stream};
use crate::matrix::{symmetric_eigen, Matrix};
use crate::scalar::Real;

/// Declared constants `(L, K1, K2)` of the Lipschitz/dissipativity assumption.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants<T> {
    pub lipschitz: T,
    pub k1: T,
    pub k2: T,
}

/// Closed-form laws for problems whose diffusion approximation is an
/// Ornstein-Uhlenbeck process `dX = -X dt + sqrt(eta sigma2 + delta) dB`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuLaw<T> {
    pub dim: usize,
    pub sigma2: T,
}

impl<T: Real> OuLaw<T> {
    /// Scalar diffusion coefficient `a = eta sigma2 + delta` (so `Q^2 = a I`).
    pub fn diffusion(&self, eta: T, delta: T) -> T {
        eta * self.sigma2 + delta
    }

    /// Per-coordinate variance of the SDE invariant law `pi`.
    pub fn sde_variance(&self, eta: T, delta: T) -> T {
        self.diffusion(eta, delta) / T::lit(2.0)
    }

    /// Per-coordinate variance of the SGLD invariant law `pi_eta`.
    pub fn chain_variance(&self, eta: T, delta: T) -> T {
        self.diffusion(eta, delta) / (T::lit(2.0) - eta)
    }

    /// `pi(h)` under the SDE invariant law, when available.
    pub fn pi(&self, h: &TestFunction<T>, eta: T, delta: T) -> Option<T> {
        h.centered_gaussian_mean(self.sde_variance(eta, delta))
    }
}

/// A stochastic loss model with its gradient oracles.
///
/// All evaluation methods write into caller-provided buffers so chains can
/// run without allocating per step.
pub trait Problem<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// Dimension `r` of the data variable `zeta`.
    fn zeta_dim(&self) -> usize;

    fn sample_zeta(&self, rng: &mut Stream, out: &mut [T]);

    /// Stochastic gradient `grad_w psi(w, zeta)`.
    fn grad_psi(&self, w: &[T], zeta: &[T], out: &mut [T]);

    /// Mean gradient `grad P(w) = E grad psi(w, zeta)`.
    fn grad_p(&self, w: &[T], out: &mut [T]);

    /// Gradient covariance `Sigma(w)`; symmetric PSD.
    fn sigma(&self, w: &[T], out: &mut Matrix<T>);

    /// True when `Sigma` does not depend on `w`, letting integrators cache `Q`.
    fn sigma_is_constant(&self) -> bool {
        false
    }

    fn constants(&self) -> AssumptionConstants<T>;

    fn analytic(&self) -> Option<OuLaw<T>> {
        None
    }
}

/// Default number of `zeta` draws for Monte Carlo covariance estimates.
pub const DEFAULT_SIGMA_BUDGET: usize = 4096;

/// Monte Carlo estimate of `Sigma(w) = E[g g^T] - grad P grad P^T`, symmetrized
/// and projected onto the PSD cone by clipping negative eigenvalues.
pub fn estimate_sigma<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    w: &[T],
    budget: usize,
    rng: &mut Stream,
) -> Matrix<T> {
    let d = problem.dim();
    let mut zeta = vec![T::zero(); problem.zeta_dim()];
    let mut g = vec![T::zero(); d];
    let mut second = Matrix::zeros(d);
    for _ in 0..budget {
        problem.sample_zeta(rng, &mut zeta);
        problem.grad_psi(w, &zeta, &mut g);
        for i in 0..d {
            for j in 0..d {
                second[(i, j)] = second[(i, j)] + g[i] * g[j];
            }
        }
    }
    let n = T::lit(budget.max(1) as f64);
    let mut mean_grad = vec![T::zero(); d];
    problem.grad_p(w, &mut mean_grad);
    for i in 0..d {
        for j in 0..d {
            second[(i, j)] = second[(i, j)] / n - mean_grad[i] * mean_grad[j];
        }
    }
    second.symmetrize();
    clip_to_psd(&second)
}

fn clip_to_psd<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    let e = symmetric_eigen(a);
    let d = a.dim();
    let mut out = Matrix::zeros(d);
    for (k, &lambda) in e.values.iter().enumerate() {
        let lambda = lambda.max(T::zero());
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] = out[(i, j)] + lambda * e.vectors[(i, k)] * e.vectors[(j, k)];
            }
        }
    }
    out.symmetrize();
    out
}

/// Replaces a problem's `Sigma` with the Monte Carlo estimate.
///
/// The estimate at `w` uses a stream derived from `seed` and the bit pattern
/// of `w`, so repeated evaluations at the same point agree exactly.
#[derive(Clone, Debug)]
pub struct McSigma<P> {
    pub inner: P,
    pub budget: usize,
    pub seed: u64,
}

impl<P> McSigma<P> {
    pub fn new(inner: P, budget: usize, seed: u64) -> Self {
        Self { inner, budget, seed }
    }
}

impl<T: Real, P: Problem<T>> Problem<T> for McSigma<P> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn zeta_dim(&self) -> usize {
        self.inner.zeta_dim()
    }
    fn sample_zeta(&self, rng: &mut Stream, out: &mut [T]) {
        self.inner.sample_zeta(rng, out)
    }
    fn grad_psi(&self, w: &[T], zeta: &[T], out: &mut [T]) {
        self.inner.grad_psi(w, zeta, out)
    }
    fn grad_p(&self, w: &[T], out: &mut [T]) {
        self.inner.grad_p(w, out)
    }
    fn sigma(&self, w: &[T], out: &mut Matrix<T>) {
        let key = w
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |acc, x| (acc ^ x.as_f64().to_bits()).wrapping_mul(0x0000_0100_0000_01b3));
        let mut rng = derive_stream(self.seed, key, "sigma");
        out.copy_from(&estimate_sigma(&self.inner, w, self.budget, &mut rng));
    }
    fn constants(&self) -> AssumptionConstants<T> {
        self.inner.constants()
    }
    fn analytic(&self) -> Option<OuLaw<T>> {
        self.inner.analytic()
    }
}
