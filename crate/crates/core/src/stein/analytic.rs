use super::{Backend, SteinField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problems::{TestFunction, TestKind};
use crate::scalar::{dot, Real};

/// Closed-form Stein solution for the Ornstein-Uhlenbeck generator
/// `L g = <-x, grad g> + (a/2) tr hess g`.
///
/// * `h = s (<v, x> + c)`: `f = -s <v, x>`.
/// * `h = s |x|^2`: `f = -s (|x|^2 - d a / 2) / 2`, `hess f = -s I`.
/// * `h` constant: `f = 0`.
#[derive(Clone, Debug)]
pub struct AnalyticOuField<T> {
    h: TestFunction<T>,
    diffusion: T,
    pi_h: T,
}

/// Builds the analytic field for `h` and diffusion coefficient `a = eta sigma2 + delta`.
pub fn analytic_stein_ou<T: Real>(h: &TestFunction<T>, diffusion: T) -> Result<AnalyticOuField<T>> {
    if !(diffusion >= T::zero()) {
        return Err(Error::Config("diffusion coefficient must be non-negative".into()));
    }
    if matches!(h.kind(), TestKind::Custom { .. }) {
        return Err(Error::Config(
            "analytic Stein solution supports constant, linear and quadratic-radial test functions".into(),
        ));
    }
    let pi_h = h.centered_gaussian_mean(diffusion / T::lit(2.0)).expect("closed form exists for non-custom kinds");
    Ok(AnalyticOuField { h: h.clone(), diffusion, pi_h })
}

impl<T: Real> AnalyticOuField<T> {
    pub fn test_function(&self) -> &TestFunction<T> {
        &self.h
    }

    pub fn diffusion(&self) -> T {
        self.diffusion
    }
}

impl<T: Real> SteinField<T> for AnalyticOuField<T> {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn backend(&self) -> Backend {
        Backend::Analytic
    }

    fn pi_h(&self) -> T {
        self.pi_h
    }

    fn tolerance(&self) -> T {
        T::zero()
    }

    fn f(&self, x: &[T]) -> Result<T> {
        let s = self.h.scale();
        Ok(match self.h.kind() {
            TestKind::Constant(_) => T::zero(),
            TestKind::Linear { direction, .. } => -s * dot(direction, x),
            TestKind::QuadraticRadial => {
                let d = T::lit(x.len() as f64);
                -s * (dot(x, x) - d * self.diffusion / T::lit(2.0)) / T::lit(2.0)
            }
            TestKind::Custom { .. } => unreachable!("rejected at construction"),
        })
    }

    #[inline]
    fn grad_f(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let s = self.h.scale();
        match self.h.kind() {
            TestKind::Constant(_) => out.fill(T::zero()),
            TestKind::Linear { direction, .. } => {
                for (o, &v) in out.iter_mut().zip(direction) {
                    *o = -s * v;
                }
            }
            TestKind::QuadraticRadial => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -s * xi;
                }
            }
            TestKind::Custom { .. } => unreachable!("rejected at construction"),
        }
        Ok(())
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn hess_f(&self, _x: &[T], out: &mut Matrix<T>) -> Result<()> {
        out.fill(T::zero());
        if let TestKind::QuadraticRadial = self.h.kind() {
            out.add_scaled_identity(-self.h.scale());
        }
        Ok(())
    }

    fn hessian_is_constant(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin() -> TestFunction<f64> {
        TestFunction::linear(&[1.0], 0.0).unwrap()
    }

    #[test]
    fn linear_field_values() {
        let field = analytic_stein_ou(&lin(), 1.01).unwrap();
        assert_eq!(field.f(&[2.0]).unwrap(), -2.0);
        let mut g = [0.0];
        field.grad_f(&[2.0], &mut g).unwrap();
        assert_eq!(g[0], -1.0);
        // L f = <-x, -1> = x = h(x) - pi(h)
        assert_eq!(field.pi_h(), 0.0);
    }

    #[test]
    fn constant_field_is_zero() {
        let field = analytic_stein_ou(&TestFunction::constant(2, 3.5), 1.0).unwrap();
        assert_eq!(field.f(&[1.0, -4.0]).unwrap(), 0.0);
        assert_eq!(field.pi_h(), 3.5);
    }

    #[test]
    fn quadratic_field_at_origin() {
        // a = 1: f(0) = a/4, L f(0) = -a/2 = h(0) - pi(h) since pi(h) = E X^2 = a/2.
        let field = analytic_stein_ou(&TestFunction::quadratic_radial(1), 1.0).unwrap();
        assert_eq!(field.f(&[0.0]).unwrap(), 0.25);
        assert_eq!(field.pi_h(), 0.5);
        let mut h = Matrix::zeros(1);
        field.hess_f(&[0.0], &mut h).unwrap();
        let lf = 0.5 * 1.0 * h[(0, 0)];
        assert_eq!(lf, 0.0 - field.pi_h());
    }

    #[test]
    fn quadratic_matches_ou_second_moment_integral() {
        // f(x) = -int_0^inf (E X_t^2 - a/2) dt with E X_t^2 = e^{-2t} x^2 + (a/2)(1 - e^{-2t}),
        // integrated by quadrature as an independent oracle.
        let a = 1.7;
        let field = analytic_stein_ou(&TestFunction::quadratic_radial(1), a).unwrap();
        for &x in &[-2.0, 0.0, 0.5, 3.0] {
            let (n, t_max) = (200_000, 40.0);
            let dt = t_max / n as f64;
            let integral: f64 = (0..n)
                .map(|j| {
                    let t = (j as f64 + 0.5) * dt;
                    let m2 = (-2.0 * t).exp() * x * x + 0.5 * a * (1.0 - (-2.0 * t).exp());
                    (m2 - 0.5 * a) * dt
                })
                .sum();
            let got = field.f(&[x]).unwrap();
            // midpoint rule error is about (2 dt)^2 / 24 relative
            assert!((got + integral).abs() < 1e-7, "{got} {integral}");
        }
    }

    #[test]
    fn linearity_in_h_is_exact() {
        let base = analytic_stein_ou(&TestFunction::linear(&[0.6, 0.8], 0.3).unwrap(), 1.2).unwrap();
        let scaled = analytic_stein_ou(&TestFunction::linear(&[0.6, 0.8], 0.3).unwrap().scaled(-2.5), 1.2).unwrap();
        for x in [[1.0, 2.0], [-0.3, 0.7]] {
            assert_eq!(scaled.f(&x).unwrap(), -2.5 * base.f(&x).unwrap());
        }
        let q1 = analytic_stein_ou(&TestFunction::quadratic_radial(2), 1.2).unwrap();
        let q3 = analytic_stein_ou(&TestFunction::quadratic_radial(2).scaled(3.0), 1.2).unwrap();
        assert_eq!(q3.f(&[1.0, 2.0]).unwrap(), 3.0 * q1.f(&[1.0, 2.0]).unwrap());
    }

    #[test]
    fn regularity_growth_bounds_hold_with_c2() {
        let a = 1.05;
        let fields =
            [analytic_stein_ou(&lin(), a).unwrap(), analytic_stein_ou(&TestFunction::quadratic_radial(1), a).unwrap()];
        let mut g = [0.0];
        let mut h = Matrix::zeros(1);
        for field in &fields {
            for i in 0..=200 {
                let x = -10.0 + 0.1 * i as f64;
                let r = f64::abs(x);
                field.grad_f(&[x], &mut g).unwrap();
                field.hess_f(&[x], &mut h).unwrap();
                assert!(field.f(&[x]).unwrap().abs() <= 2.0 * (1.0 + r * r));
                assert!(g[0].abs() <= 2.0 * (1.0 + r.powi(3)));
                assert!(h.frobenius_norm() <= 2.0 * (1.0 + r.powi(4)));
            }
        }
    }

    #[test]
    fn custom_h_rejected() {
        let h = TestFunction::custom(1, 1.0, |x: &[f64]| x[0].sin()).unwrap();
        assert!(matches!(analytic_stein_ou(&h, 1.0), Err(Error::Config(_))));
    }
}
