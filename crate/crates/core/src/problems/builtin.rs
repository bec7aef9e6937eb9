use serde::{Deserialize, Serialize};

use super::{AssumptionConstants, OuLaw, Problem};
use crate::dynamics::Stream;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// `psi(w, zeta) = |w - zeta|^2 / 2` with `zeta ~ N(0, sigma2 I)`.
///
/// `grad psi = w - zeta`, `grad P = w`, `Sigma = sigma2 I`, and the
/// diffusion approximation is an Ornstein-Uhlenbeck process.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMean<T> {
    dim: usize,
    sigma2: T,
    sigma: T,
    constants: AssumptionConstants<T>,
}

impl<T: Real> GaussianMean<T> {
    pub fn new(dim: usize, sigma2: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("gaussian_mean: dimension must be at least 1".into()));
        }
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(Error::Config("gaussian_mean: sigma2 must be positive".into()));
        }
        Ok(Self {
            dim,
            sigma2,
            sigma: sigma2.sqrt(),
            constants: AssumptionConstants { lipschitz: T::one(), k1: T::one(), k2: T::zero() },
        })
    }

    /// Overrides the declared assumption constants (the dynamics are unchanged).
    pub fn with_constants(mut self, constants: AssumptionConstants<T>) -> Self {
        self.constants = constants;
        self
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn law(&self) -> OuLaw<T> {
        OuLaw { dim: self.dim, sigma2: self.sigma2 }
    }
}

impl<T: Real> Problem<T> for GaussianMean<T> {
    fn name(&self) -> &'static str {
        "gaussian_mean"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn zeta_dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn sample_zeta(&self, rng: &mut Stream, out: &mut [T]) {
        for z in out.iter_mut() {
            *z = self.sigma * T::standard_normal(rng);
        }
    }

    #[inline]
    fn grad_psi(&self, w: &[T], zeta: &[T], out: &mut [T]) {
        for ((o, &wi), &zi) in out.iter_mut().zip(w).zip(zeta) {
            *o = wi - zi;
        }
    }

    #[inline]
    fn grad_p(&self, w: &[T], out: &mut [T]) {
        out.copy_from_slice(w);
    }

    fn sigma(&self, _w: &[T], out: &mut Matrix<T>) {
        out.fill(T::zero());
        out.add_scaled_identity(self.sigma2);
    }

    fn sigma_is_constant(&self) -> bool {
        true
    }

    fn constants(&self) -> AssumptionConstants<T> {
        self.constants
    }

    fn analytic(&self) -> Option<OuLaw<T>> {
        Some(self.law())
    }
}

/// Nonconvex instance `psi(w, zeta) = |w - zeta|^2 / 2 + epsilon cos(w_1)`.
///
/// `grad psi = w - zeta - epsilon sin(w_1) e_1`; Lipschitz with `L = 1 + epsilon`
/// and dissipative with `K1 = 1/2`, `K2 = 2 epsilon^2`. No closed-form Stein
/// solution exists.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedQuadratic<T> {
    dim: usize,
    epsilon: T,
    sigma2: T,
    sigma: T,
    constants: AssumptionConstants<T>,
}

impl<T: Real> PerturbedQuadratic<T> {
    pub fn new(dim: usize, epsilon: T, sigma2: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("perturbed_quadratic: dimension must be at least 1".into()));
        }
        if !(epsilon >= T::zero() && epsilon < T::lit(0.5)) {
            return Err(Error::Config(format!("perturbed_quadratic: epsilon must lie in [0, 1/2), got {epsilon}")));
        }
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(Error::Config("perturbed_quadratic: sigma2 must be positive".into()));
        }
        Ok(Self {
            dim,
            epsilon,
            sigma2,
            sigma: sigma2.sqrt(),
            constants: AssumptionConstants {
                lipschitz: T::one() + epsilon,
                k1: T::lit(0.5),
                k2: T::lit(2.0) * epsilon * epsilon,
            },
        })
    }

    pub fn with_constants(mut self, constants: AssumptionConstants<T>) -> Self {
        self.constants = constants;
        self
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }
}

impl<T: Real> Problem<T> for PerturbedQuadratic<T> {
    fn name(&self) -> &'static str {
        "perturbed_quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn zeta_dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn sample_zeta(&self, rng: &mut Stream, out: &mut [T]) {
        for z in out.iter_mut() {
            *z = self.sigma * T::standard_normal(rng);
        }
    }

    #[inline]
    fn grad_psi(&self, w: &[T], zeta: &[T], out: &mut [T]) {
        for ((o, &wi), &zi) in out.iter_mut().zip(w).zip(zeta) {
            *o = wi - zi;
        }
        out[0] = out[0] - self.epsilon * w[0].sin();
    }

    #[inline]
    fn grad_p(&self, w: &[T], out: &mut [T]) {
        out.copy_from_slice(w);
        out[0] = out[0] - self.epsilon * w[0].sin();
    }

    fn sigma(&self, _w: &[T], out: &mut Matrix<T>) {
        out.fill(T::zero());
        out.add_scaled_identity(self.sigma2);
    }

    fn sigma_is_constant(&self) -> bool {
        true
    }

    fn constants(&self) -> AssumptionConstants<T> {
        self.constants
    }
}

/// Serializable selection of a built-in problem by name and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProblemSpec {
    GaussianMean {
        dim: usize,
        sigma2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constants: Option<AssumptionConstants<f64>>,
    },
    PerturbedQuadratic {
        dim: usize,
        epsilon: f64,
        sigma2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constants: Option<AssumptionConstants<f64>>,
    },
}

/// Statically dispatched union of the built-in problems.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyProblem<T> {
    GaussianMean(GaussianMean<T>),
    PerturbedQuadratic(PerturbedQuadratic<T>),
}

fn cast_constants<T: Real>(c: &AssumptionConstants<f64>) -> AssumptionConstants<T> {
    AssumptionConstants { lipschitz: T::lit(c.lipschitz), k1: T::lit(c.k1), k2: T::lit(c.k2) }
}

impl ProblemSpec {
    pub fn build<T: Real>(&self) -> Result<AnyProblem<T>> {
        Ok(match self {
            ProblemSpec::GaussianMean { dim, sigma2, constants } => {
                let mut p = GaussianMean::new(*dim, T::lit(*sigma2))?;
                if let Some(c) = constants {
                    p = p.with_constants(cast_constants(c));
                }
                AnyProblem::GaussianMean(p)
            }
            ProblemSpec::PerturbedQuadratic { dim, epsilon, sigma2, constants } => {
                let mut p = PerturbedQuadratic::new(*dim, T::lit(*epsilon), T::lit(*sigma2))?;
                if let Some(c) = constants {
                    p = p.with_constants(cast_constants(c));
                }
                AnyProblem::PerturbedQuadratic(p)
            }
        })
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            AnyProblem::GaussianMean($p) => $e,
            AnyProblem::PerturbedQuadratic($p) => $e,
        }
    };
}

impl<T: Real> Problem<T> for AnyProblem<T> {
    fn name(&self) -> &'static str {
        delegate!(self, p => p.name())
    }
    fn dim(&self) -> usize {
        delegate!(self, p => p.dim())
    }
    fn zeta_dim(&self) -> usize {
        delegate!(self, p => p.zeta_dim())
    }
    #[inline]
    fn sample_zeta(&self, rng: &mut Stream, out: &mut [T]) {
        delegate!(self, p => p.sample_zeta(rng, out))
    }
    #[inline]
    fn grad_psi(&self, w: &[T], zeta: &[T], out: &mut [T]) {
        delegate!(self, p => p.grad_psi(w, zeta, out))
    }
    #[inline]
    fn grad_p(&self, w: &[T], out: &mut [T]) {
        delegate!(self, p => p.grad_p(w, out))
    }
    fn sigma(&self, w: &[T], out: &mut Matrix<T>) {
        delegate!(self, p => p.sigma(w, out))
    }
    fn sigma_is_constant(&self) -> bool {
        delegate!(self, p => p.sigma_is_constant())
    }
    fn constants(&self) -> AssumptionConstants<T> {
        delegate!(self, p => p.constants())
    }
    fn analytic(&self) -> Option<OuLaw<T>> {
        delegate!(self, p => p.analytic())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::derive_stream;
    use crate::matrix::symmetric_eigen;
    use crate::problems::{estimate_sigma, sample_ball};
    use crate::scalar::norm;

    #[test]
    fn gaussian_mean_gradients() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let mut g = [0.0];
        p.grad_psi(&[1.0], &[0.5], &mut g);
        assert_eq!(g[0], 0.5);
        p.grad_p(&[0.0], &mut g);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn gaussian_mean_sigma_matches_mc_oracle() {
        let p = GaussianMean::<f64>::new(1, 2.0).unwrap();
        let mut s = Matrix::zeros(1);
        p.sigma(&[3.0], &mut s);
        assert_eq!(s[(0, 0)], 2.0);
        // E[(w - zeta)^2] - w^2 estimated from draws; sd of the estimator ~ 2 sqrt(2/n)
        let mut rng = derive_stream(1, 0, "test");
        let mc = estimate_sigma(&p, &[3.0], 200_000, &mut rng);
        assert!((mc[(0, 0)] - 2.0).abs() < 4.0 * 2.0 * (2.0f64 / 200_000.0).sqrt() + 0.05);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GaussianMean::<f64>::new(0, 1.0).is_err());
        assert!(GaussianMean::<f64>::new(1, 0.0).is_err());
        assert!(PerturbedQuadratic::<f64>::new(1, 0.5, 1.0).is_err());
        assert!(PerturbedQuadratic::<f64>::new(1, -0.1, 1.0).is_err());
    }

    #[test]
    fn perturbed_quadratic_mean_gradient() {
        let p = PerturbedQuadratic::<f64>::new(1, 0.1, 1.0).unwrap();
        let mut g = [0.0];
        p.grad_p(&[0.0], &mut g);
        assert_eq!(g[0], 0.0);
        p.grad_p(&[std::f64::consts::FRAC_PI_2], &mut g);
        assert!((g[0] - 1.4708).abs() < 1e-4);
        let c = p.constants();
        assert!((c.lipschitz - 1.1).abs() < 1e-15 && c.k1 == 0.5 && (c.k2 - 0.02).abs() < 1e-15);
    }

    #[test]
    fn gaussian_mean_grad_p_is_identity() {
        let p = GaussianMean::<f64>::new(3, 1.0).unwrap();
        let mut rng = derive_stream(5, 0, "test");
        let mut w = [0.0; 3];
        let mut g = [0.0; 3];
        for _ in 0..100 {
            sample_ball(&mut rng, 10.0, &mut w);
            p.grad_p(&w, &mut g);
            assert_eq!(g, w);
        }
    }

    #[test]
    fn builtins_sigma_symmetric_psd_and_linear_growth() {
        let problems: Vec<AnyProblem<f64>> = vec![
            AnyProblem::GaussianMean(GaussianMean::new(2, 1.5).unwrap()),
            AnyProblem::PerturbedQuadratic(PerturbedQuadratic::new(2, 0.3, 0.7).unwrap()),
        ];
        let mut rng = derive_stream(6, 0, "test");
        for p in &problems {
            let mut w = [0.0; 2];
            let mut g = [0.0; 2];
            let mut g0 = [0.0; 2];
            let mut s = Matrix::zeros(2);
            p.grad_p(&[0.0, 0.0], &mut g0);
            let l = p.constants().lipschitz;
            for _ in 0..500 {
                sample_ball(&mut rng, 10.0, &mut w);
                p.sigma(&w, &mut s);
                assert_eq!(s.max_asymmetry(), 0.0);
                let e = symmetric_eigen(&s);
                let tol = -1e-10 * s.frobenius_norm();
                assert!(e.values.iter().all(|&v| v >= tol));
                p.grad_p(&w, &mut g);
                assert!(norm(&g) <= l * norm(&w) + norm(&g0) + 1e-12);
            }
        }
    }

    #[test]
    fn grad_p_is_mean_of_grad_psi() {
        let p = PerturbedQuadratic::<f64>::new(2, 0.2, 2.0).unwrap();
        let mut rng = derive_stream(7, 0, "test");
        let w = [1.3, -0.4];
        let n = 8192;
        let (mut sum, mut sumsq) = ([0.0; 2], [0.0; 2]);
        let mut z = [0.0; 2];
        let mut g = [0.0; 2];
        for _ in 0..n {
            p.sample_zeta(&mut rng, &mut z);
            p.grad_psi(&w, &z, &mut g);
            for i in 0..2 {
                sum[i] += g[i];
                sumsq[i] += g[i] * g[i];
            }
        }
        let mut gp = [0.0; 2];
        p.grad_p(&w, &mut gp);
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let se = ((sumsq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - gp[i]).abs() <= 4.0 * se, "coord {i}: {mean} vs {}", gp[i]);
        }
    }

    #[test]
    fn spec_builds_and_overrides_constants() {
        let spec: ProblemSpec = serde_json::from_str(
            r#"{"name":"gaussian_mean","dim":1,"sigma2":1.0,"constants":{"lipschitz":0.5,"k1":1.0,"k2":0.0}}"#,
        )
        .unwrap();
        let p = spec.build::<f64>().unwrap();
        assert_eq!(p.constants().lipschitz, 0.5);
        assert_eq!(p.name(), "gaussian_mean");
    }
}
