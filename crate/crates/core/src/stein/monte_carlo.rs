use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Backend, SteinField};
use crate::dynamics::{derive_stream, grid_steps, EulerMaruyama, DIVERGENCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problems::{Problem, TestFunction};
use crate::scalar::{norm, to_f64_vec, Real};

/// Truncation horizon making `exp(-k1 T) = 1e-5`.
pub fn default_horizon<T: Real>(k1: T) -> T {
    T::lit(1e5).ln() / k1
}

/// Settings of the truncated path-integral estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSteinConfig<T> {
    pub horizon: T,
    pub dt: T,
    pub n_paths: usize,
    pub eta: T,
    pub delta: T,
    pub seed: u64,
    /// Finite-difference step for gradients and Hessians.
    pub fd_step: T,
    /// Declared absolute tolerance of one evaluation.
    pub tolerance: T,
}

impl<T: Real> McSteinConfig<T> {
    pub fn new(eta: T, delta: T, horizon: T) -> Self {
        Self {
            horizon,
            dt: T::lit(0.01),
            n_paths: 10_000,
            eta,
            delta,
            seed: 0,
            fd_step: T::lit(0.05),
            tolerance: T::lit(0.05),
        }
    }

    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dt(mut self, dt: T) -> Self {
        self.dt = dt;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::Config(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if !(self.horizon > T::zero()) || !(self.dt > T::zero()) || self.dt > self.horizon {
            return Err(Error::Config("need 0 < dt <= horizon".into()));
        }
        Ok(())
    }
}

/// A Monte Carlo estimate with its path-wise standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate<T> {
    pub estimate: T,
    pub std_error: T,
    /// Magnitude of the averaged integrand at the truncation horizon.
    pub bias_proxy: T,
    pub n_paths: usize,
}

/// Runs `starts.len()` Euler-Maruyama paths per replication, all driven by the
/// same Gaussian increments, and returns for each row of `coeffs` the estimate
/// of `-sum_k c_k int_0^T (E h(X_t^{(k)}) - pi_h) dt`.
fn crn_ensemble<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    h: &TestFunction<T>,
    starts: &[Vec<T>],
    coeffs: &[Vec<T>],
    cfg: &McSteinConfig<T>,
    pi_h: T,
) -> Result<Vec<McEstimate<T>>> {
    cfg.validate()?;
    let d = problem.dim();
    if h.dim() != d || starts.iter().any(|s| s.len() != d) {
        return Err(Error::Config("dimension mismatch between problem, h and start point".into()));
    }
    let n = grid_steps(cfg.horizon, cfg.dt);
    let k = starts.len();
    let outputs = coeffs.len();
    let half = T::lit(0.5);
    let limit = T::lit(DIVERGENCE_THRESHOLD);
    let template = EulerMaruyama::new(d, cfg.dt, cfg.eta, cfg.delta)?;

    let per_path: Vec<Result<(Vec<T>, Vec<T>)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map_init(
            || (vec![template.clone(); k], vec![T::zero(); k * d], vec![T::zero(); d], vec![T::zero(); k]),
            |(ems, xs, xi, acc), p| {
                let mut rng = derive_stream(cfg.seed, p as u64, "stein-path");
                xs.iter_mut().zip(starts.iter().flatten()).for_each(|(x, &s)| *x = s);
                for (a, x) in acc.iter_mut().zip(xs.chunks(d)) {
                    *a = half * (h.evaluate(x) - pi_h);
                }
                for j in 0..n {
                    for v in xi.iter_mut() {
                        *v = T::standard_normal(&mut rng);
                    }
                    let w = if j + 1 == n { half } else { T::one() };
                    for ((em, x), a) in ems.iter_mut().zip(xs.chunks_mut(d)).zip(acc.iter_mut()) {
                        em.step(problem, x, xi)?;
                        if !(norm(x) <= limit) {
                            return Err(Error::Divergence {
                                step: j + 1,
                                norm: norm(x).as_f64(),
                                state: to_f64_vec(x),
                            });
                        }
                        *a = *a + w * (h.evaluate(x) - pi_h);
                    }
                }
                let combine = |vals: &[T]| -> Vec<T> {
                    coeffs.iter().map(|c| c.iter().zip(vals).fold(T::zero(), |s, (&c, &v)| s + c * v)).collect()
                };
                let tail: Vec<T> = xs.chunks(d).map(|x| h.evaluate(x) - pi_h).collect();
                let integrals: Vec<T> = acc.iter().map(|&a| -a * cfg.dt).collect();
                Ok((combine(&integrals), combine(&tail)))
            },
        )
        .collect();

    // ordered reduction keeps results independent of the thread count
    let np = T::lit(cfg.n_paths as f64);
    let mut sum = vec![T::zero(); outputs];
    let mut tail_sum = vec![T::zero(); outputs];
    let mut values = Vec::with_capacity(cfg.n_paths);
    for r in per_path {
        let (v, t) = r?;
        for o in 0..outputs {
            sum[o] = sum[o] + v[o];
            tail_sum[o] = tail_sum[o] + t[o];
        }
        values.push(v);
    }
    Ok((0..outputs)
        .map(|o| {
            let mean = sum[o] / np;
            let ss = values.iter().fold(T::zero(), |s, v| s + (v[o] - mean) * (v[o] - mean));
            let var = ss / (np - T::one());
            McEstimate {
                estimate: mean,
                std_error: (var / np).sqrt(),
                bias_proxy: (tail_sum[o] / np).abs(),
                n_paths: cfg.n_paths,
            }
        })
        .collect())
}

/// Estimates `f(x) = -int_0^T E[h(X_t(x)) - pi_h] dt` with the trapezoid rule.
pub fn stein_f_mc<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    h: &TestFunction<T>,
    x: &[T],
    cfg: &McSteinConfig<T>,
    pi_h: T,
) -> Result<McEstimate<T>> {
    Ok(crn_ensemble(problem, h, &[x.to_vec()], &[vec![T::one()]], cfg, pi_h)?[0])
}

/// Central-difference gradient of the Monte Carlo field with common random
/// numbers across the `x +- eps e_i` paths. Returns one estimate per coordinate.
pub fn stein_grad_mc<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    h: &TestFunction<T>,
    x: &[T],
    cfg: &McSteinConfig<T>,
    pi_h: T,
) -> Result<Vec<McEstimate<T>>> {
    let eps = cfg.fd_step;
    if !(eps > T::zero()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let d = x.len();
    let mut starts = Vec::with_capacity(2 * d);
    let mut coeffs = Vec::with_capacity(d);
    let c = T::one() / (T::lit(2.0) * eps);
    for i in 0..d {
        for sign in [T::one(), -T::one()] {
            let mut s = x.to_vec();
            s[i] = s[i] + sign * eps;
            starts.push(s);
        }
        let mut row = vec![T::zero(); 2 * d];
        row[2 * i] = c;
        row[2 * i + 1] = -c;
        coeffs.push(row);
    }
    crn_ensemble(problem, h, &starts, &coeffs, cfg, pi_h)
}

/// Second differences of the Monte Carlo field with common random numbers.
fn stein_hess_mc<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    h: &TestFunction<T>,
    x: &[T],
    cfg: &McSteinConfig<T>,
    pi_h: T,
) -> Result<Matrix<T>> {
    let eps = cfg.fd_step;
    if !(eps > T::zero()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let d = x.len();
    let shifted = |moves: &[(usize, T)]| {
        let mut s = x.to_vec();
        for &(i, v) in moves {
            s[i] = s[i] + v;
        }
        s
    };
    let mut starts = vec![x.to_vec()];
    let mut entries = Vec::new();
    let e2 = eps * eps;
    for i in 0..d {
        for j in i..d {
            let base = starts.len();
            let mut row: Vec<(usize, T)> = Vec::new();
            if i == j {
                starts.push(shifted(&[(i, eps)]));
                starts.push(shifted(&[(i, -eps)]));
                row.push((0, -T::lit(2.0) / e2));
                row.push((base, T::one() / e2));
                row.push((base + 1, T::one() / e2));
            } else {
                let c = T::one() / (T::lit(4.0) * e2);
                for (a, b, s) in [(eps, eps, c), (eps, -eps, -c), (-eps, eps, -c), (-eps, -eps, c)] {
                    row.push((starts.len(), s));
                    starts.push(shifted(&[(i, a), (j, b)]));
                }
            }
            entries.push((i, j, row));
        }
    }
    let coeffs: Vec<Vec<T>> = entries
        .iter()
        .map(|(_, _, row)| {
            let mut c = vec![T::zero(); starts.len()];
            for &(idx, v) in row {
                c[idx] = c[idx] + v;
            }
            c
        })
        .collect();
    let est = crn_ensemble(problem, h, &starts, &coeffs, cfg, pi_h)?;
    let mut out = Matrix::zeros(d);
    for ((i, j, _), e) in entries.iter().zip(est) {
        out[(*i, *j)] = e.estimate;
        out[(*j, *i)] = e.estimate;
    }
    Ok(out)
}

/// `pi(h)` from one long Euler-Maruyama run of `1e3 / k1` time units after a
/// burn-in of `20 / k1`, with a batch-means standard error.
pub fn estimate_pi_h<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    h: &TestFunction<T>,
    eta: T,
    delta: T,
    dt: T,
    seed: u64,
) -> Result<McEstimate<T>> {
    const BATCHES: usize = 50;
    let k1 = problem.constants().k1;
    if !(k1 > T::zero()) {
        return Err(Error::Config("problem declares a non-positive K1".into()));
    }
    let d = problem.dim();
    let burn = grid_steps(T::lit(20.0) / k1, dt);
    let n = grid_steps(T::lit(1e3) / k1, dt).max(BATCHES);
    let per_batch = n / BATCHES;
    let mut em = EulerMaruyama::new(d, dt, eta, delta)?;
    let mut rng = derive_stream(seed, 0, "pi-h");
    let mut x = vec![T::zero(); d];
    let mut xi = vec![T::zero(); d];
    let limit = T::lit(DIVERGENCE_THRESHOLD);
    let mut batch_means = Vec::with_capacity(BATCHES);
    let mut acc = T::zero();
    for j in 0..burn + per_batch * BATCHES {
        em.step_with(problem, &mut x, &mut xi, &mut rng)?;
        if !(norm(&x) <= limit) {
            return Err(Error::Divergence { step: j + 1, norm: norm(&x).as_f64(), state: to_f64_vec(&x) });
        }
        if j >= burn {
            acc = acc + h.evaluate(&x);
            if (j + 1 - burn) % per_batch == 0 {
                batch_means.push(acc / T::lit(per_batch as f64));
                acc = T::zero();
            }
        }
    }
    let b = T::lit(BATCHES as f64);
    let mean = batch_means.iter().fold(T::zero(), |s, &v| s + v) / b;
    let var = batch_means.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / (b - T::one());
    Ok(McEstimate { estimate: mean, std_error: (var / b).sqrt(), bias_proxy: T::zero(), n_paths: 1 })
}

/// A Stein field evaluated on demand by Monte Carlo. Every query reuses the
/// configured seed, so evaluations at nearby points share random numbers.
#[derive(Clone, Debug)]
pub struct McSteinField<T, P> {
    problem: P,
    h: TestFunction<T>,
    cfg: McSteinConfig<T>,
    pi_h: T,
}

impl<T: Real, P: Problem<T>> McSteinField<T, P> {
    pub fn new(problem: P, h: TestFunction<T>, cfg: McSteinConfig<T>, pi_h: T) -> Result<Self> {
        cfg.validate()?;
        if h.dim() != problem.dim() {
            return Err(Error::Config("test function and problem dimensions differ".into()));
        }
        Ok(Self { problem, h, cfg, pi_h })
    }

    pub fn config(&self) -> &McSteinConfig<T> {
        &self.cfg
    }

    pub fn test_function(&self) -> &TestFunction<T> {
        &self.h
    }

    pub fn estimate(&self, x: &[T]) -> Result<McEstimate<T>> {
        stein_f_mc(&self.problem, &self.h, x, &self.cfg, self.pi_h)
    }
}

impl<T: Real, P: Problem<T>> SteinField<T> for McSteinField<T, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn backend(&self) -> Backend {
        Backend::MonteCarlo
    }

    fn pi_h(&self) -> T {
        self.pi_h
    }

    fn tolerance(&self) -> T {
        self.cfg.tolerance
    }

    fn f(&self, x: &[T]) -> Result<T> {
        Ok(self.estimate(x)?.estimate)
    }

    fn grad_f(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let g = stein_grad_mc(&self.problem, &self.h, x, &self.cfg, self.pi_h)?;
        for (o, e) in out.iter_mut().zip(g) {
            *o = e.estimate;
        }
        Ok(())
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn hess_f(&self, x: &[T], out: &mut Matrix<T>) -> Result<()> {
        out.copy_from(&stein_hess_mc(&self.problem, &self.h, x, &self.cfg, self.pi_h)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::GaussianMean;

    fn setup() -> (GaussianMean<f64>, McSteinConfig<f64>) {
        let p = GaussianMean::new(1, 1.0).unwrap();
        let cfg = McSteinConfig::new(0.01, 1.0, 10.0).with_paths(4000).with_dt(0.02).with_seed(17);
        (p, cfg)
    }

    #[test]
    fn linear_h_matches_analytic_value() {
        let (p, cfg) = setup();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        let est = stein_f_mc(&p, &h, &[2.0], &cfg, 0.0).unwrap();
        // EM bias of the geometric sum is about dt/2 * x
        assert!((est.estimate + 2.0).abs() < 4.0 * est.std_error + 0.05, "{est:?}");
        assert!(est.bias_proxy < 0.2);
    }

    #[test]
    fn constant_h_gives_exact_zero() {
        let (p, cfg) = setup();
        let h = TestFunction::constant(1, 3.0);
        let est = stein_f_mc(&p, &h, &[1.5], &cfg, 3.0).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.std_error, 0.0);
        let g = stein_grad_mc(&p, &h, &[1.5], &cfg, 3.0).unwrap();
        assert_eq!(g[0].estimate, 0.0);
    }

    #[test]
    fn odd_h_at_stationary_mean_is_zero() {
        let (p, cfg) = setup();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        let est = stein_f_mc(&p, &h, &[0.0], &cfg, 0.0).unwrap();
        assert!(est.estimate.abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn crn_gradient_for_linear_and_quadratic() {
        let (p, cfg) = setup();
        let lin = TestFunction::linear(&[1.0], 0.0).unwrap();
        let g = stein_grad_mc(&p, &lin, &[0.7], &cfg, 0.0).unwrap();
        assert!((g[0].estimate + 1.0).abs() < 0.02, "{g:?}");
        // CRN makes the OU difference deterministic
        assert!(g[0].std_error < 1e-10);
        let q = TestFunction::quadratic_radial(1);
        let a = 0.01 + 1.0;
        let g = stein_grad_mc(&p, &q, &[1.0], &cfg, a / 2.0).unwrap();
        assert!((g[0].estimate + 1.0).abs() < 0.03, "{g:?}");
    }

    #[test]
    fn hessian_of_quadratic_field() {
        let (p, cfg) = setup();
        let q = TestFunction::quadratic_radial(1);
        let field = McSteinField::new(p, q, cfg, 1.01 / 2.0).unwrap();
        let mut hm = Matrix::zeros(1);
        field.hess_f(&[0.5], &mut hm).unwrap();
        assert!((hm[(0, 0)] + 1.0).abs() < 0.03, "{:?}", hm);
    }

    #[test]
    fn mixed_hessian_entries_in_two_dimensions() {
        let p = GaussianMean::new(2, 1.0).unwrap();
        let cfg = McSteinConfig::new(0.01, 1.0, 8.0).with_paths(200).with_dt(0.02);
        let field = McSteinField::new(p, TestFunction::quadratic_radial(2), cfg, 1.01).unwrap();
        let mut hm: Matrix<f64> = Matrix::zeros(2);
        field.hess_f(&[0.5, -0.2], &mut hm).unwrap();
        assert!(hm[(0, 1)].abs() < 1e-9);
        assert_eq!(hm[(0, 1)], hm[(1, 0)]);
        assert!((hm[(1, 1)] + 1.0).abs() < 0.03);
    }

    #[test]
    fn deterministic_and_thread_count_independent() {
        let (p, cfg) = setup();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        let a = stein_f_mc(&p, &h, &[1.0], &cfg, 0.0).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| stein_f_mc(&p, &h, &[1.0], &cfg, 0.0).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn averaging_independent_runs_halves_variance() {
        let (p, cfg) = setup();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        // variance of the mean of two runs, each of n paths, equals that of one run of 2n
        let one = stein_f_mc(&p, &h, &[1.0], &cfg.clone().with_paths(2000), 0.0).unwrap();
        let two = stein_f_mc(&p, &h, &[1.0], &cfg.clone().with_paths(4000), 0.0).unwrap();
        let ratio = (two.std_error / one.std_error).powi(2);
        assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, cfg) = setup();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        assert!(stein_f_mc(&p, &h, &[0.0], &cfg.clone().with_paths(1), 0.0).is_err());
        let mut bad = cfg.clone();
        bad.fd_step = 0.0;
        assert!(matches!(stein_grad_mc(&p, &h, &[0.0], &bad, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn long_run_pi_h_for_gaussian_mean() {
        let p = GaussianMean::new(1, 1.0).unwrap();
        let q = TestFunction::quadratic_radial(1);
        let est = estimate_pi_h(&p, &q, 0.01, 1.0, 0.01, 3).unwrap();
        // EM stationary variance a / (2 - dt)
        let exact: f64 = 1.01 / (2.0 - 0.01);
        assert!((est.estimate - exact).abs() < 4.0 * est.std_error + 1e-3, "{est:?}");
    }

    #[test]
    fn default_horizon_value() {
        assert!((default_horizon(1.0f64) - 11.512925464970229).abs() < 1e-12);
    }
}
