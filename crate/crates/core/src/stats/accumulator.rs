use serde::{Deserialize, Serialize};

use super::statistics::{finish_remainders, self_normalized, Remainders, StepWorkspace};
use crate::error::{Error, Result};
use crate::problems::{Problem, TestFunction};
use crate::scalar::{dot, Real};
use crate::stein::SteinField;

/// How much of the decomposition a streaming pass computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detail {
    /// `pi_hat`, `y_eta`, `w_eta`.
    Basic,
    /// Adds the martingale term and the remainder by subtraction.
    Martingale,
    /// Adds `R1..R4`; needs a Hessian.
    Components,
}

/// Statistics of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStats<T> {
    pub m: usize,
    pub pi_hat: T,
    pub y_eta: T,
    pub w_eta: T,
    /// `sqrt(m eta / delta) (pi_hat - pi_h)`.
    pub scaled_deviation: T,
    pub h_eta: Option<T>,
    pub r_residual: Option<T>,
    pub remainders: Option<Remainders<T>>,
}

impl<T: Real> ChainStats<T> {
    /// `lhs - H - R` with `R = -(R1 + .. + R4)`.
    pub fn identity_residual(&self) -> Option<T> {
        let (h, r) = (self.h_eta?, self.remainders?);
        Some(self.scaled_deviation - h - r.remainder())
    }
}

/// Computes chain statistics one state at a time, matching the
/// trajectory-based functions bit for bit.
pub struct ChainAccumulator<'a, T, F: ?Sized, P: ?Sized> {
    field: &'a F,
    problem: &'a P,
    h: &'a TestFunction<T>,
    eta: T,
    delta: T,
    detail: Detail,
    ws: StepWorkspace<T>,
    m: usize,
    f0: Option<T>,
    sum_h: T,
    sum_y: T,
    sum_mart: T,
    sum_r2: T,
    sum_r3: T,
    sum_r4: T,
}

impl<'a, T: Real, F: SteinField<T> + ?Sized, P: Problem<T> + ?Sized> ChainAccumulator<'a, T, F, P> {
    pub fn new(field: &'a F, problem: &'a P, h: &'a TestFunction<T>, eta: T, delta: T, detail: Detail) -> Result<Self> {
        if detail == Detail::Components && !field.has_hessian() {
            return Err(Error::MissingHessian);
        }
        Ok(Self {
            field,
            problem,
            h,
            eta,
            delta,
            detail,
            ws: StepWorkspace::new(problem.dim()),
            m: 0,
            f0: None,
            sum_h: T::zero(),
            sum_y: T::zero(),
            sum_mart: T::zero(),
            sum_r2: T::zero(),
            sum_r3: T::zero(),
            sum_r4: T::zero(),
        })
    }

    /// Records `w_k`; `draws` are `(zeta_{k+1}, xi_{k+1})`, required beyond [`Detail::Basic`].
    #[inline]
    pub fn visit(&mut self, w: &[T], draws: Option<(&[T], &[T])>) -> Result<()> {
        self.sum_h = self.sum_h + self.h.evaluate(w);
        self.field.grad_f(w, &mut self.ws.grad_f)?;
        self.sum_y = self.sum_y + dot(&self.ws.grad_f, &self.ws.grad_f);
        if self.detail >= Detail::Martingale {
            let (zeta, xi) = draws.ok_or(Error::MissingNoiseLog)?;
            self.sum_mart = self.sum_mart + dot(&self.ws.grad_f, xi);
            if self.detail == Detail::Components {
                if self.f0.is_none() {
                    self.f0 = Some(self.field.f(w)?);
                }
                let t = self.ws.remainder_terms(self.field, self.problem, self.eta, self.delta, w, zeta, xi, true)?;
                self.sum_r2 = self.sum_r2 + t.r2;
                self.sum_r3 = self.sum_r3 + t.r3;
                self.sum_r4 = self.sum_r4 + t.r4;
            }
        }
        self.m += 1;
        Ok(())
    }

    /// `final_state` is `w_m`, used by `R1`.
    pub fn finish(self, final_state: &[T], pi_h: T) -> Result<ChainStats<T>> {
        if self.m == 0 {
            return Err(Error::Config("trajectory is empty".into()));
        }
        let mt = T::lit(self.m as f64);
        let pi_hat = self.sum_h / mt;
        let y = self.sum_y / mt;
        let w = self_normalized(self.m, self.eta, self.delta, pi_hat, pi_h, y)?;
        let scaled_deviation = (mt * self.eta / self.delta).sqrt() * (pi_hat - pi_h);
        let (mut h_eta, mut r_residual, mut remainders) = (None, None, None);
        if self.detail >= Detail::Martingale {
            let mart = -self.sum_mart / mt.sqrt();
            h_eta = Some(mart);
            r_residual = Some(scaled_deviation - mart);
        }
        if self.detail == Detail::Components {
            let f0 = self.f0.expect("set on first visit");
            let fm = self.field.f(final_state)?;
            remainders =
                Some(finish_remainders(self.m, self.eta, self.delta, f0, fm, self.sum_r2, self.sum_r3, self.sum_r4));
        }
        Ok(ChainStats { m: self.m, pi_hat, y_eta: y, w_eta: w, scaled_deviation, h_eta, r_residual, remainders })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{derive_stream, run_chain, run_chain_streaming, ChainConfig};
    use crate::problems::PerturbedQuadratic;
    use crate::stats::{h_eta, pi_hat, r_components, r_residual, w_eta, y_eta};
    use crate::stein::analytic_stein_ou;

    #[test]
    fn streaming_matches_trajectory_functions_exactly() {
        let p = PerturbedQuadratic::new(1, 0.1, 1.0).unwrap();
        let h = TestFunction::quadratic_radial(1);
        // any field with a Hessian suffices for the bookkeeping comparison
        let field = analytic_stein_ou(&h, 1.05).unwrap();
        let (eta, delta, pi_h) = (0.05, 1.0, 0.4);
        let cfg = ChainConfig::new(eta, delta, 500, 3, vec![0.5]).with_noise_log();
        let t = run_chain(&p, &cfg).unwrap();

        let mut acc = ChainAccumulator::new(&field, &p, &h, eta, delta, Detail::Components).unwrap();
        let mut rng = derive_stream(cfg.seed, 0, "chain");
        let mut err = None;
        let last = run_chain_streaming(&p, &cfg, &mut rng, |_, w, draws| {
            if let Err(e) = acc.visit(w, draws) {
                err = Some(e);
            }
        })
        .unwrap();
        assert!(err.is_none());
        let s = acc.finish(&last, pi_h).unwrap();
        assert_eq!(last, t.final_state);
        assert_eq!(s.pi_hat, pi_hat(&t, &h).unwrap());
        assert_eq!(s.y_eta, y_eta(&t, &field).unwrap());
        assert_eq!(s.w_eta, w_eta(&t, &h, &field, pi_h, eta, delta).unwrap());
        assert_eq!(s.h_eta, Some(h_eta(&t, &field).unwrap()));
        assert_eq!(s.r_residual, Some(r_residual(&t, &h, &field, pi_h, eta, delta).unwrap()));
        assert_eq!(s.remainders, Some(r_components(&t, &field, &p, eta, delta).unwrap()));
    }

    #[test]
    fn martingale_detail_requires_draws() {
        let p = PerturbedQuadratic::new(1, 0.1, 1.0).unwrap();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        let field = analytic_stein_ou(&h, 1.0).unwrap();
        let mut acc = ChainAccumulator::new(&field, &p, &h, 0.1, 1.0, Detail::Martingale).unwrap();
        assert!(matches!(acc.visit(&[0.0], None), Err(Error::MissingNoiseLog)));
    }
}
