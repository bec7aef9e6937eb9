//! Numerical spot checks of the Lipschitz, dissipativity and sub-Gaussian
//! assumptions over a ball of explicit radius.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::dynamics::{derive_stream, Stream};
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Real};

pub const DEFAULT_RADIUS: f64 = 10.0;
pub const DEFAULT_SUBGAUSSIAN_GAMMA: f64 = 0.05;

/// Summands `exp(a)` with `a` above this are treated as overflow.
const EXP_CLIP: f64 = 700.0;

/// Record emitted by every validator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub check: String,
    pub pass: bool,
    pub worst_value: f64,
    pub n_samples: usize,
    pub radius: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianReport {
    #[serde(flatten)]
    pub summary: ValidatorReport,
    pub gamma: f64,
    pub cap: f64,
    /// `(x, estimate of E exp{gamma |grad psi(x, zeta)|^2})` per grid point.
    pub estimates: Vec<(Vec<f64>, f64)>,
    pub clipped_fraction: f64,
    pub gamma_too_large: bool,
}

/// Uniform draw from the centred ball of the given radius.
pub fn sample_ball<T: Real, R: Rng + ?Sized>(rng: &mut R, radius: T, out: &mut [T]) {
    loop {
        for x in out.iter_mut() {
            *x = T::standard_normal(rng);
        }
        let n = norm(out);
        if n > T::zero() {
            let d = T::lit(out.len() as f64);
            let r = radius * T::uniform(rng).powf(T::one() / d);
            for x in out.iter_mut() {
                *x = *x / n * r;
            }
            return;
        }
    }
}

struct PairSampler<'a, T: Real, P: ?Sized> {
    problem: &'a P,
    rng: Stream,
    radius: T,
    x: Vec<T>,
    y: Vec<T>,
    zeta: Vec<T>,
    gx: Vec<T>,
    gy: Vec<T>,
}

impl<'a, T: Real, P: Problem<T> + ?Sized> PairSampler<'a, T, P> {
    fn new(problem: &'a P, radius: T, seed: u64, tag: &str) -> Self {
        let d = problem.dim();
        Self {
            problem,
            rng: derive_stream(seed, 0, tag),
            radius,
            x: vec![T::zero(); d],
            y: vec![T::zero(); d],
            zeta: vec![T::zero(); problem.zeta_dim()],
            gx: vec![T::zero(); d],
            gy: vec![T::zero(); d],
        }
    }

    /// Draws `(x, y, zeta)` and fills both gradients. Returns `|x - y|^2`.
    fn next(&mut self) -> T {
        sample_ball(&mut self.rng, self.radius, &mut self.x);
        sample_ball(&mut self.rng, self.radius, &mut self.y);
        self.problem.sample_zeta(&mut self.rng, &mut self.zeta);
        self.problem.grad_psi(&self.x, &self.zeta, &mut self.gx);
        self.problem.grad_psi(&self.y, &self.zeta, &mut self.gy);
        self.x.iter().zip(&self.y).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
    }
}

fn check_pairs(n_pairs: usize) -> Result<()> {
    if n_pairs == 0 {
        return Err(Error::Config("validator needs at least one pair".into()));
    }
    Ok(())
}

/// Largest sampled `|grad psi(x, z) - grad psi(y, z)| / |x - y|`; passes iff it
/// does not exceed the declared `L (1 + 1e-9)`.
pub fn check_lipschitz<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    n_pairs: usize,
    radius: T,
    seed: u64,
) -> Result<ValidatorReport> {
    check_pairs(n_pairs)?;
    let mut s = PairSampler::new(problem, radius, seed, "check-lipschitz");
    let mut worst = T::neg_infinity();
    let mut used = 0usize;
    for _ in 0..n_pairs {
        let dist2 = s.next();
        if dist2 == T::zero() {
            continue;
        }
        let diff2 = s.gx.iter().zip(&s.gy).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        worst = worst.max((diff2 / dist2).sqrt());
        used += 1;
    }
    if used == 0 {
        return Err(Error::Diagnostic("lipschitz check: every sampled pair was degenerate".into()));
    }
    let l = problem.constants().lipschitz;
    Ok(ValidatorReport {
        check: "lipschitz".into(),
        pass: worst <= l * (T::one() + T::lit(1e-9)),
        worst_value: worst.as_f64(),
        n_samples: used,
        radius: radius.as_f64(),
        seed,
    })
}

/// Largest sampled `<x - y, -grad psi(x, z) + grad psi(y, z)> + K1 |x - y|^2 - K2`;
/// passes iff every value is below a rounding tolerance.
pub fn check_dissipativity<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    n_pairs: usize,
    radius: T,
    seed: u64,
) -> Result<ValidatorReport> {
    check_pairs(n_pairs)?;
    let c = problem.constants();
    let mut s = PairSampler::new(problem, radius, seed, "check-dissipativity");
    let mut worst = T::neg_infinity();
    let mut pass = true;
    let mut used = 0usize;
    let mut dx = vec![T::zero(); problem.dim()];
    let mut dg = vec![T::zero(); problem.dim()];
    for _ in 0..n_pairs {
        let dist2 = s.next();
        if dist2 == T::zero() {
            continue;
        }
        for i in 0..dx.len() {
            dx[i] = s.x[i] - s.y[i];
            dg[i] = s.gy[i] - s.gx[i];
        }
        let value = dot(&dx, &dg) + c.k1 * dist2 - c.k2;
        let tol = T::lit(1e-9) * (T::one() + c.k1 * dist2 + c.k2);
        pass &= value <= tol;
        worst = worst.max(value);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Diagnostic("dissipativity check: every sampled pair was degenerate".into()));
    }
    Ok(ValidatorReport {
        check: "dissipativity".into(),
        pass,
        worst_value: worst.as_f64(),
        n_samples: used,
        radius: radius.as_f64(),
        seed,
    })
}

/// Monte Carlo estimates of `E exp{gamma |grad psi(x, zeta)|^2}` on a grid.
///
/// Passes iff every estimate is finite and at most `cap`. Summands whose
/// exponent exceeds the overflow threshold are clipped and counted; any clip
/// marks the run as `gamma_too_large`.
pub fn check_subgaussian<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    gamma: T,
    n_samples: usize,
    grid: &[Vec<T>],
    cap: f64,
    seed: u64,
) -> Result<SubGaussianReport> {
    if n_samples == 0 || grid.is_empty() {
        return Err(Error::Config("sub-gaussian check needs samples and grid points".into()));
    }
    if !(gamma >= T::zero()) {
        return Err(Error::Config("sub-gaussian check needs gamma >= 0".into()));
    }
    let mut rng = derive_stream(seed, 0, "check-subgaussian");
    let mut zeta = vec![T::zero(); problem.zeta_dim()];
    let mut g = vec![T::zero(); problem.dim()];
    let gamma64 = gamma.as_f64();
    let mut estimates = Vec::with_capacity(grid.len());
    let mut clipped = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for x in grid {
        if x.len() != problem.dim() {
            return Err(Error::Config("sub-gaussian grid point has wrong dimension".into()));
        }
        let mut sum = 0.0;
        for _ in 0..n_samples {
            problem.sample_zeta(&mut rng, &mut zeta);
            problem.grad_psi(x, &zeta, &mut g);
            let a = gamma64 * dot(&g, &g).as_f64();
            if a > EXP_CLIP {
                clipped += 1;
                sum = f64::INFINITY;
            } else {
                sum += a.exp();
            }
        }
        let est = sum / n_samples as f64;
        worst = worst.max(est);
        estimates.push((crate::scalar::to_f64_vec(x), est));
    }
    let gamma_too_large = clipped > 0 || !worst.is_finite();
    Ok(SubGaussianReport {
        summary: ValidatorReport {
            check: "subgaussian".into(),
            pass: !gamma_too_large && worst <= cap,
            worst_value: worst,
            n_samples: n_samples * grid.len(),
            radius: grid.iter().map(|x| norm(x).as_f64()).fold(0.0, f64::max),
            seed,
        },
        gamma: gamma64,
        cap,
        estimates,
        clipped_fraction: clipped as f64 / (n_samples * grid.len()) as f64,
        gamma_too_large,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::problems::{AssumptionConstants, GaussianMean, PerturbedQuadratic};

    fn consts(l: f64, k1: f64, k2: f64) -> AssumptionConstants<f64> {
        AssumptionConstants { lipschitz: l, k1, k2 }
    }

    #[test]
    fn gaussian_mean_lipschitz_ratio_is_one() {
        let p = GaussianMean::<f64>::new(3, 1.0).unwrap();
        let r = check_lipschitz(&p, 1000, 10.0, 1).unwrap();
        assert!(r.pass);
        assert!((r.worst_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halved_lipschitz_fails() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap().with_constants(consts(0.5, 1.0, 0.0));
        assert!(!check_lipschitz(&p, 100, 10.0, 1).unwrap().pass);
    }

    #[test]
    fn perturbed_lipschitz_brute_force() {
        let p = PerturbedQuadratic::<f64>::new(1, 0.1, 1.0).unwrap();
        let r = check_lipschitz(&p, 10_000, 10.0, 2).unwrap();
        assert!(r.worst_value <= 1.1 + 1e-12);
        assert!(r.worst_value > 1.0);
        assert!(r.pass);
    }

    #[test]
    fn gaussian_mean_dissipativity() {
        let p = GaussianMean::<f64>::new(2, 1.0).unwrap();
        let r = check_dissipativity(&p, 1000, 10.0, 3).unwrap();
        assert!(r.pass, "{r:?}");
        let bad = p.with_constants(consts(1.0, 2.0, 0.0));
        assert!(!check_dissipativity(&bad, 1000, 10.0, 3).unwrap().pass);
    }

    #[test]
    fn perturbed_dissipativity_brute_force() {
        let p = PerturbedQuadratic::<f64>::new(1, 0.1, 1.0).unwrap();
        let r = check_dissipativity(&p, 10_000, 10.0, 4).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.n_samples, 10_000);
    }

    #[test]
    fn zero_pairs_is_config_error() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        assert!(matches!(check_lipschitz(&p, 0, 10.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_pairs_are_a_diagnostic_error() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let r = check_lipschitz(&p, 10, 0.0, 0);
        assert!(matches!(r, Err(Error::Diagnostic(_))));
    }

    #[test]
    fn validators_are_deterministic() {
        let p = PerturbedQuadratic::<f64>::new(2, 0.2, 1.0).unwrap();
        assert_eq!(check_lipschitz(&p, 500, 5.0, 8).unwrap(), check_lipschitz(&p, 500, 5.0, 8).unwrap());
    }

    #[test]
    fn subgaussian_matches_gaussian_mgf() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let n = 100_000;
        let r = check_subgaussian(&p, 0.1, n, &[vec![0.0]], 1e6, 5).unwrap();
        let oracle = (1.0f64 - 0.2).powf(-0.5);
        // Var exp(0.1 Z^2) = (1 - 0.4)^{-1/2} - (1 - 0.2)^{-1}
        let se = (((0.6f64).powf(-0.5) - 1.25) / n as f64).sqrt();
        assert!((r.estimates[0].1 - oracle).abs() < 4.0 * se, "{} vs {oracle}", r.estimates[0].1);
        assert!(r.summary.pass);
    }

    #[test]
    fn subgaussian_gamma_zero_is_one() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let r = check_subgaussian(&p, 0.0, 100, &[vec![0.0], vec![3.0]], 1e6, 0).unwrap();
        assert!(r.estimates.iter().all(|(_, e)| *e == 1.0));
    }

    struct Deterministic;

    impl Problem<f64> for Deterministic {
        fn name(&self) -> &'static str {
            "deterministic"
        }
        fn dim(&self) -> usize {
            1
        }
        fn zeta_dim(&self) -> usize {
            1
        }
        fn sample_zeta(&self, _rng: &mut Stream, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn grad_psi(&self, w: &[f64], _zeta: &[f64], out: &mut [f64]) {
            out[0] = w[0];
        }
        fn grad_p(&self, w: &[f64], out: &mut [f64]) {
            out[0] = w[0];
        }
        fn sigma(&self, _w: &[f64], out: &mut Matrix<f64>) {
            out.fill(0.0);
        }
        fn constants(&self) -> AssumptionConstants<f64> {
            consts(1.0, 1.0, 0.0)
        }
    }

    #[test]
    fn subgaussian_deterministic_gradient_is_exact() {
        let r = check_subgaussian(&Deterministic, 0.05, 10, &[vec![2.0]], 1e6, 0).unwrap();
        assert!((r.estimates[0].1 - (0.05f64 * 4.0).exp()).abs() < 1e-14);
    }

    #[test]
    fn subgaussian_overflow_flags_gamma() {
        let r = check_subgaussian(&Deterministic, 10.0, 10, &[vec![10.0]], 1e6, 0).unwrap();
        assert!(r.gamma_too_large);
        assert!(!r.summary.pass);
        assert_eq!(r.clipped_fraction, 1.0);
    }
}
