use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problems::{Problem, TestFunction};
use crate::scalar::{dot, Real};
use crate::stein::SteinField;

fn nonempty<T: Real>(traj: &Trajectory<T>) -> Result<usize> {
    match traj.len() {
        0 => Err(Error::Config("trajectory is empty".into())),
        m => Ok(m),
    }
}

/// Empirical average `(1/m) sum h(w_k)`.
pub fn pi_hat<T: Real>(traj: &Trajectory<T>, h: &TestFunction<T>) -> Result<T> {
    let m = nonempty(traj)?;
    let sum = traj.iter_states().fold(T::zero(), |s, w| s + h.evaluate(w));
    Ok(sum / T::lit(m as f64))
}

/// Random normalizer `(1/m) sum |grad f(w_k)|^2`.
pub fn y_eta<T: Real, F: SteinField<T> + ?Sized>(traj: &Trajectory<T>, field: &F) -> Result<T> {
    let m = nonempty(traj)?;
    let mut g = vec![T::zero(); traj.dim];
    let mut sum = T::zero();
    for w in traj.iter_states() {
        field.grad_f(w, &mut g)?;
        sum = sum + dot(&g, &g);
    }
    Ok(sum / T::lit(m as f64))
}

/// `sqrt(m eta) (pi_hat - pi_h) / sqrt(delta y)`.
pub fn self_normalized<T: Real>(m: usize, eta: T, delta: T, pi_hat: T, pi_h: T, y: T) -> Result<T> {
    let denom = (delta * y).sqrt();
    if !(denom > T::zero()) {
        return Err(Error::Degenerate(format!("self-normalizer vanishes (delta = {delta}, y = {y})")));
    }
    Ok((T::lit(m as f64) * eta).sqrt() * (pi_hat - pi_h) / denom)
}

/// Self-normalized statistic of the chain.
pub fn w_eta<T: Real, F: SteinField<T> + ?Sized>(
    traj: &Trajectory<T>,
    h: &TestFunction<T>,
    field: &F,
    pi_h: T,
    eta: T,
    delta: T,
) -> Result<T> {
    let p = pi_hat(traj, h)?;
    let y = y_eta(traj, field)?;
    self_normalized(traj.len(), eta, delta, p, pi_h, y)
}

/// Martingale term `-(1/sqrt m) sum <grad f(w_k), xi_{k+1}>`.
pub fn h_eta<T: Real, F: SteinField<T> + ?Sized>(traj: &Trajectory<T>, field: &F) -> Result<T> {
    let m = nonempty(traj)?;
    let mut g = vec![T::zero(); traj.dim];
    let mut sum = T::zero();
    for k in 0..m {
        let xi = traj.xi(k)?;
        field.grad_f(traj.state(k), &mut g)?;
        sum = sum + dot(&g, xi);
    }
    Ok(-sum / T::lit(m as f64).sqrt())
}

/// Remainder by subtraction: `sqrt(m eta / delta) (pi_hat - pi_h) - H`.
pub fn r_residual<T: Real, F: SteinField<T> + ?Sized>(
    traj: &Trajectory<T>,
    h: &TestFunction<T>,
    field: &F,
    pi_h: T,
    eta: T,
    delta: T,
) -> Result<T> {
    let m = T::lit(nonempty(traj)? as f64);
    let mart = h_eta(traj, field)?;
    let p = pi_hat(traj, h)?;
    Ok(scaled_deviation(m, eta, delta, p - pi_h)? - mart)
}

fn scaled_deviation<T: Real>(m: T, eta: T, delta: T, dev: T) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(Error::Degenerate("delta must be positive for the decomposition".into()));
    }
    Ok((m * eta / delta).sqrt() * dev)
}

/// The four remainder components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Remainders<T> {
    pub r1: T,
    pub r2: T,
    pub r3: T,
    pub r4: T,
}

impl<T: Real> Remainders<T> {
    /// `R = -(R1 + R2 + R3 + R4)`.
    pub fn remainder(&self) -> T {
        -(self.r1 + self.r2 + self.r3 + self.r4)
    }
}

// 8-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Per-step work shared by the trajectory and streaming code paths.
pub(crate) struct StepWorkspace<T> {
    pub grad_f: Vec<T>,
    grad_p: Vec<T>,
    grad_psi: Vec<T>,
    step: Vec<T>,
    probe: Vec<T>,
    hess: Matrix<T>,
    hess_probe: Matrix<T>,
    sigma: Matrix<T>,
}

/// Per-step contributions `(<g, grad P - grad psi>, R3 integrand, R4 summand)`.
pub(crate) struct StepTerms<T> {
    pub r2: T,
    pub r3: T,
    pub r4: T,
}

impl<T: Real> StepWorkspace<T> {
    pub fn new(d: usize) -> Self {
        Self {
            grad_f: vec![T::zero(); d],
            grad_p: vec![T::zero(); d],
            grad_psi: vec![T::zero(); d],
            step: vec![T::zero(); d],
            probe: vec![T::zero(); d],
            hess: Matrix::zeros(d),
            hess_probe: Matrix::zeros(d),
            sigma: Matrix::zeros(d),
        }
    }

    /// Assumes `grad_f` already holds `grad f(w)`.
    #[allow(clippy::too_many_arguments)]
    pub fn remainder_terms<F: SteinField<T> + ?Sized, P: Problem<T> + ?Sized>(
        &mut self,
        field: &F,
        problem: &P,
        eta: T,
        delta: T,
        w: &[T],
        zeta: &[T],
        xi: &[T],
        with_hessian: bool,
    ) -> Result<StepTerms<T>> {
        problem.grad_p(w, &mut self.grad_p);
        problem.grad_psi(w, zeta, &mut self.grad_psi);
        let mut r2 = T::zero();
        for i in 0..w.len() {
            r2 = r2 + self.grad_f[i] * (self.grad_p[i] - self.grad_psi[i]);
        }
        if !with_hessian {
            return Ok(StepTerms { r2, r3: T::zero(), r4: T::zero() });
        }
        let noise = (eta * delta).sqrt();
        for i in 0..w.len() {
            self.step[i] = -eta * self.grad_psi[i] + noise * xi[i];
        }
        field.hess_f(w, &mut self.hess)?;
        problem.sigma(w, &mut self.sigma);
        self.sigma.scale(eta * eta);
        self.sigma.add_scaled_identity(eta * delta);
        let r4 = self.hess.outer_inner(&self.step, &self.step) - self.hess.hs_inner(&self.sigma);
        let r3 = if field.hessian_is_constant() {
            T::zero()
        } else {
            // int_0^1 int_0^1 s <hess f(w + s s' dw) - hess f(w), dw dw^T> ds' ds
            let base = self.hess.outer_inner(&self.step, &self.step);
            let mut acc = T::zero();
            for (&ns, &ws) in GL_NODES.iter().zip(&GL_WEIGHTS) {
                let s = T::lit(0.5 * (ns + 1.0));
                for (&nt, &wt) in GL_NODES.iter().zip(&GL_WEIGHTS) {
                    let t = T::lit(0.5 * (nt + 1.0));
                    for i in 0..w.len() {
                        self.probe[i] = w[i] + s * t * self.step[i];
                    }
                    field.hess_f(&self.probe, &mut self.hess_probe)?;
                    let inner = self.hess_probe.outer_inner(&self.step, &self.step) - base;
                    acc = acc + T::lit(0.25 * ws * wt) * s * inner;
                }
            }
            acc
        };
        Ok(StepTerms { r2, r3, r4 })
    }
}

/// Remainder components of the martingale decomposition.
///
/// With `dw_k = -eta grad psi(w_k, zeta_{k+1}) + sqrt(eta delta) xi_{k+1}`:
///
/// * `R1 = (f(w_0) - f(w_m)) / sqrt(m eta delta)`
/// * `R2 = sqrt(eta) / sqrt(m delta) sum <grad f, grad P - grad psi>`
/// * `R3 = 1/sqrt(m eta delta) sum int int s <hess f(w + s s' dw) - hess f(w), dw dw^T>`
/// * `R4 = 1/(2 sqrt(m eta delta)) sum <hess f, dw dw^T - eta^2 Sigma - eta delta I>`
///
/// so that `sqrt(m eta / delta)(pi_hat - pi_h) = H - (R1 + R2 + R3 + R4)`.
pub fn r_components<T: Real, F: SteinField<T> + ?Sized, P: Problem<T> + ?Sized>(
    traj: &Trajectory<T>,
    field: &F,
    problem: &P,
    eta: T,
    delta: T,
) -> Result<Remainders<T>> {
    let m = nonempty(traj)?;
    let log = traj.noise.as_ref().ok_or(Error::MissingNoiseLog)?;
    if !field.has_hessian() {
        return Err(Error::MissingHessian);
    }
    let mut ws = StepWorkspace::new(traj.dim);
    let (mut s2, mut s3, mut s4) = (T::zero(), T::zero(), T::zero());
    for k in 0..m {
        let w = traj.state(k);
        field.grad_f(w, &mut ws.grad_f)?;
        let t = ws.remainder_terms(field, problem, eta, delta, w, log.zeta(k), traj.xi(k)?, true)?;
        s2 = s2 + t.r2;
        s3 = s3 + t.r3;
        s4 = s4 + t.r4;
    }
    let f0 = field.f(traj.state(0))?;
    let fm = field.f(&traj.final_state)?;
    Ok(finish_remainders(m, eta, delta, f0, fm, s2, s3, s4))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_remainders<T: Real>(
    m: usize,
    eta: T,
    delta: T,
    f0: T,
    fm: T,
    s2: T,
    s3: T,
    s4: T,
) -> Remainders<T> {
    let mt = T::lit(m as f64);
    let root = (mt * eta * delta).sqrt();
    Remainders {
        r1: (f0 - fm) / root,
        r2: eta.sqrt() / (mt * delta).sqrt() * s2,
        r3: s3 / root,
        r4: s4 / (T::lit(2.0) * root),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_chain, ChainConfig};
    use crate::problems::GaussianMean;
    use crate::stein::analytic_stein_ou;

    fn traj(states: &[f64]) -> Trajectory<f64> {
        Trajectory {
            dim: 1,
            eta: 0.25,
            delta: 1.0,
            states: states.to_vec(),
            final_state: vec![*states.last().unwrap()],
            noise: None,
        }
    }

    fn lin() -> TestFunction<f64> {
        TestFunction::linear(&[1.0], 0.0).unwrap()
    }

    #[test]
    fn pi_hat_examples() {
        let t = traj(&[0.0, 1.0, 2.0]);
        assert_eq!(pi_hat(&t, &lin()).unwrap(), 1.0);
        assert_eq!(pi_hat(&t, &TestFunction::constant(1, 2.5)).unwrap(), 2.5);
        assert_eq!(pi_hat(&traj(&[2.0, 0.0, 1.0]), &lin()).unwrap(), 1.0);
        let empty = Trajectory { states: vec![], ..t };
        assert!(pi_hat(&empty, &lin()).is_err());
    }

    #[test]
    fn y_eta_examples() {
        let field = analytic_stein_ou(&lin(), 1.0).unwrap();
        assert_eq!(y_eta(&traj(&[0.3, -5.0, 2.0]), &field).unwrap(), 1.0);
        // quadratic field has grad f = -x, so states {-1, -2} give gradients {1, 2}
        let q = analytic_stein_ou(&TestFunction::quadratic_radial(1), 1.0).unwrap();
        assert_eq!(y_eta(&traj(&[-1.0, -2.0]), &q).unwrap(), 2.5);
        let q2 = analytic_stein_ou(&TestFunction::quadratic_radial(1).scaled(2.0), 1.0).unwrap();
        assert_eq!(y_eta(&traj(&[-1.0, -2.0]), &q2).unwrap(), 10.0);
    }

    #[test]
    fn w_eta_arithmetic_and_symmetries() {
        // m = 4, eta = 0.25, pi_hat = 0.5, y = 1
        let t = traj(&[0.0, 1.0, 0.5, 0.5]);
        let field = analytic_stein_ou(&lin(), 1.0).unwrap();
        assert_eq!(w_eta(&t, &lin(), &field, 0.0, 0.25, 1.0).unwrap(), 0.5);

        let t = traj(&[0.3, -1.2, 2.2, 0.9, -0.4]);
        let h = TestFunction::linear(&[1.0], 0.2).unwrap();
        let base = w_eta(&t, &h, &analytic_stein_ou(&h, 1.1).unwrap(), 0.2, 0.1, 1.0).unwrap();
        let neg = h.scaled(-1.0);
        let flipped = w_eta(&t, &neg, &analytic_stein_ou(&neg, 1.1).unwrap(), -0.2, 0.1, 1.0).unwrap();
        assert_eq!(flipped, -base);
        let big = h.scaled(4.0);
        let scaled = w_eta(&t, &big, &analytic_stein_ou(&big, 1.1).unwrap(), 0.8, 0.1, 1.0).unwrap();
        assert_eq!(scaled, base);
    }

    #[test]
    fn zero_normalizer_is_degenerate() {
        let c = TestFunction::constant(1, 1.0);
        let field = analytic_stein_ou(&c, 1.0).unwrap();
        assert!(matches!(w_eta(&traj(&[1.0]), &c, &field, 1.0, 0.1, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn h_eta_examples() {
        let field = analytic_stein_ou(&lin(), 1.0).unwrap();
        let mut t = traj(&[0.0]);
        t.noise = Some(crate::dynamics::NoiseLog { zeta_dim: 1, zetas: vec![0.0], xis: vec![0.3] });
        assert_eq!(h_eta(&t, &field).unwrap(), 0.3);
        t.noise = Some(crate::dynamics::NoiseLog { zeta_dim: 1, zetas: vec![0.0], xis: vec![0.0] });
        assert_eq!(h_eta(&t, &field).unwrap(), 0.0);
        t.noise = None;
        assert!(matches!(h_eta(&t, &field), Err(Error::MissingNoiseLog)));
    }

    #[test]
    fn remainder_examples() {
        let p = GaussianMean::new(1, 1.0).unwrap();
        let field = analytic_stein_ou(&lin(), 1.25).unwrap();
        let mut t = traj(&[0.0, 0.1, -0.3, 0.05]);
        t.final_state = vec![0.2];
        t.noise = Some(crate::dynamics::NoiseLog {
            zeta_dim: 1,
            zetas: vec![0.1, -0.1, 0.2, 0.0],
            xis: vec![0.5, -0.2, 0.1, 0.0],
        });
        let r = r_components(&t, &field, &p, 0.25, 1.0).unwrap();
        assert!((r.r1 - 0.2).abs() < 1e-15);
        assert!((r.r2 + 0.05).abs() < 1e-15);
        assert_eq!(r.r3, 0.0);
        assert_eq!(r.r4, 0.0);
    }

    #[test]
    fn identity_closes_for_quadratic_h() {
        // hess f = -I is constant, so R3 = 0 and R4 carries the second-order term
        let (eta, delta, s2) = (0.05, 1.0, 1.5);
        let p = GaussianMean::new(2, s2).unwrap();
        let h = TestFunction::quadratic_radial(2);
        let a = eta * s2 + delta;
        let field = analytic_stein_ou(&h, a).unwrap();
        let cfg = ChainConfig::new(eta, delta, 2000, 11, vec![0.0, 0.0]).with_noise_log();
        let t = run_chain(&p, &cfg).unwrap();
        let pi_h = field.pi_h();
        let r = r_components(&t, &field, &p, eta, delta).unwrap();
        assert_eq!(r.r3, 0.0);
        assert!(r.r4 != 0.0);
        let lhs = ((2000.0 * eta / delta) as f64).sqrt() * (pi_hat(&t, &h).unwrap() - pi_h);
        let mart = h_eta(&t, &field).unwrap();
        let gap = lhs - mart - r.remainder();
        assert!(gap.abs() <= 1e-9 * (1.0 + lhs.abs()), "{gap:e}");
        // the opposite sign convention for R4 leaves a gap of 2 R4
        let flipped = lhs - mart + (r.r1 + r.r2 + r.r3 - r.r4);
        assert!(flipped.abs() > 1e-3, "{flipped:e}");
        let resid = r_residual(&t, &h, &field, pi_h, eta, delta).unwrap();
        assert!((resid - r.remainder()).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn quadrature_recovers_cubic_taylor_remainder() {
        // field with f = x^4 / 12: hess f = x^2 is not constant. For one step
        // the identity f(w + dw) - f(w) - f'(w) dw - f''(w) dw^2 / 2 = R3 integrand holds exactly.
        struct Quartic;
        impl SteinField<f64> for Quartic {
            fn dim(&self) -> usize {
                1
            }
            fn backend(&self) -> crate::stein::Backend {
                crate::stein::Backend::Analytic
            }
            fn pi_h(&self) -> f64 {
                0.0
            }
            fn tolerance(&self) -> f64 {
                0.0
            }
            fn f(&self, x: &[f64]) -> Result<f64> {
                Ok(x[0].powi(4) / 12.0)
            }
            fn grad_f(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
                out[0] = x[0].powi(3) / 3.0;
                Ok(())
            }
            fn has_hessian(&self) -> bool {
                true
            }
            fn hess_f(&self, x: &[f64], out: &mut Matrix<f64>) -> Result<()> {
                out[(0, 0)] = x[0] * x[0];
                Ok(())
            }
        }
        let p = GaussianMean::new(1, 1.0).unwrap();
        let (eta, delta) = (0.1, 1.0);
        let (w, zeta, xi) = (0.7, -0.4, 1.3);
        let mut ws = StepWorkspace::new(1);
        Quartic.grad_f(&[w], &mut ws.grad_f).unwrap();
        let t = ws.remainder_terms(&Quartic, &p, eta, delta, &[w], &[zeta], &[xi], true).unwrap();
        let dw: f64 = -eta * (w - zeta) + (eta * delta).sqrt() * xi;
        let f = |x: f64| x.powi(4) / 12.0;
        let exact = f(w + dw) - f(w) - w.powi(3) / 3.0 * dw - 0.5 * w * w * dw * dw;
        assert!((t.r3 - exact).abs() < 1e-15, "{} vs {exact}", t.r3);
    }
}
