use super::sgld::DIVERGENCE_THRESHOLD;
use super::sqrt::psd_sqrt;
use super::stream::{derive_stream, Stream};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problems::Problem;
use crate::scalar::{norm, to_f64_vec, Real};

/// Number of uniform steps of size `dt` needed to reach `horizon`, treating
/// ratios within `1e-9` of an integer as exact.
pub fn grid_steps<T: Real>(horizon: T, dt: T) -> usize {
    let r = (horizon / dt).as_f64();
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        n as usize
    } else {
        r.ceil() as usize
    }
}

/// Euler-Maruyama integrator for `dX = -grad P(X) dt + Q(X) dB` with
/// `Q = (eta Sigma + delta I)^{1/2}`.
#[derive(Clone, Debug)]
pub struct EulerMaruyama<T> {
    eta: T,
    delta: T,
    dt: T,
    sqrt_dt: T,
    grad: Vec<T>,
    sigma: Matrix<T>,
    q: Matrix<T>,
    kick: Vec<T>,
    q_cached: bool,
}

impl<T: Real> EulerMaruyama<T> {
    pub fn new(dim: usize, dt: T, eta: T, delta: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        Ok(Self {
            eta,
            delta,
            dt,
            sqrt_dt: dt.sqrt(),
            grad: vec![T::zero(); dim],
            sigma: Matrix::zeros(dim),
            q: Matrix::zeros(dim),
            kick: vec![T::zero(); dim],
            q_cached: false,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    fn refresh_q<P: Problem<T> + ?Sized>(&mut self, problem: &P, x: &[T]) -> Result<()> {
        if self.q_cached {
            return Ok(());
        }
        problem.sigma(x, &mut self.sigma);
        self.sigma.scale(self.eta);
        self.sigma.add_scaled_identity(self.delta);
        self.q = psd_sqrt(&self.sigma)?;
        self.q_cached = problem.sigma_is_constant();
        Ok(())
    }

    /// Applies `x <- x - grad P(x) dt + Q(x) sqrt(dt) xi` in place.
    #[inline]
    pub fn step<P: Problem<T> + ?Sized>(&mut self, problem: &P, x: &mut [T], xi: &[T]) -> Result<()> {
        self.refresh_q(problem, x)?;
        problem.grad_p(x, &mut self.grad);
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step: 0, norm: norm(x).as_f64(), state: to_f64_vec(x) });
        }
        if x.len() == 1 {
            x[0] = x[0] - self.grad[0] * self.dt + self.q[(0, 0)] * self.sqrt_dt * xi[0];
        } else {
            self.q.mul_vec_into(xi, &mut self.kick);
            for ((xi_, &g), &k) in x.iter_mut().zip(&self.grad).zip(&self.kick) {
                *xi_ = *xi_ - g * self.dt + k * self.sqrt_dt;
            }
        }
        Ok(())
    }

    /// Fills `xi` with standard normals from `rng` and steps.
    #[inline]
    pub fn step_with<P: Problem<T> + ?Sized>(
        &mut self,
        problem: &P,
        x: &mut [T],
        xi: &mut [T],
        rng: &mut Stream,
    ) -> Result<()> {
        for v in xi.iter_mut() {
            *v = T::standard_normal(rng);
        }
        self.step(problem, x, xi)
    }
}

/// One Euler-Maruyama step from an explicit Gaussian draw.
pub fn em_step<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    dt: T,
    xi: &[T],
    eta: T,
    delta: T,
) -> Result<Vec<T>> {
    let mut out = x.to_vec();
    EulerMaruyama::new(x.len(), dt, eta, delta)?.step(problem, &mut out, xi)?;
    Ok(out)
}

/// A discretized SDE trajectory on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SdePath<T> {
    pub dim: usize,
    pub dt: T,
    pub horizon: T,
    pub times: Vec<T>,
    /// Flattened `(n + 1) x d`.
    pub states: Vec<T>,
}

impl<T: Real> SdePath<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, j: usize) -> &[T] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }
}

/// Simulates `ceil(horizon / dt)` steps from `x0` using stream `(seed, 0, "sde")`.
pub fn sde_path<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    horizon: T,
    dt: T,
    eta: T,
    delta: T,
    seed: u64,
) -> Result<SdePath<T>> {
    let mut rng = derive_stream(seed, 0, "sde");
    sde_path_with_stream(problem, x0, horizon, dt, eta, delta, &mut rng)
}

pub fn sde_path_with_stream<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    horizon: T,
    dt: T,
    eta: T,
    delta: T,
    rng: &mut Stream,
) -> Result<SdePath<T>> {
    if !(horizon > T::zero()) || !(dt > T::zero()) || dt > horizon {
        return Err(Error::Config("sde path needs 0 < dt <= horizon".into()));
    }
    let d = problem.dim();
    if x0.len() != d {
        return Err(Error::Config("initial point has the wrong dimension".into()));
    }
    let n = grid_steps(horizon, dt);
    let mut em = EulerMaruyama::new(d, dt, eta, delta)?;
    let mut x = x0.to_vec();
    let mut xi = vec![T::zero(); d];
    let mut states = Vec::with_capacity((n + 1) * d);
    states.extend_from_slice(&x);
    let limit = T::lit(DIVERGENCE_THRESHOLD);
    for j in 0..n {
        em.step_with(problem, &mut x, &mut xi, rng).map_err(|e| match e {
            Error::Divergence { norm, state, .. } => Error::Divergence { step: j, norm, state },
            other => other,
        })?;
        if !(norm(&x) <= limit) {
            return Err(Error::Divergence { step: j + 1, norm: norm(&x).as_f64(), state: to_f64_vec(&x) });
        }
        states.extend_from_slice(&x);
    }
    let times = (0..=n).map(|j| T::lit(j as f64) * dt).collect();
    Ok(SdePath { dim: d, dt, horizon, times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{AssumptionConstants, GaussianMean};

    /// Zero drift, zero covariance.
    struct Still;
    impl Problem<f64> for Still {
        fn name(&self) -> &'static str {
            "still"
        }
        fn dim(&self) -> usize {
            2
        }
        fn zeta_dim(&self) -> usize {
            1
        }
        fn sample_zeta(&self, _rng: &mut Stream, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn grad_psi(&self, _w: &[f64], _z: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn grad_p(&self, _w: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn sigma(&self, _w: &[f64], out: &mut Matrix<f64>) {
            out.fill(0.0);
        }
        fn constants(&self) -> AssumptionConstants<f64> {
            AssumptionConstants { lipschitz: 1.0, k1: 1.0, k2: 0.0 }
        }
    }

    #[test]
    fn grid_step_count() {
        assert_eq!(grid_steps(15.0, 0.01), 1500);
        assert_eq!(grid_steps(1.0, 0.3), 4);
        assert_eq!(grid_steps(0.5, 0.5), 1);
    }

    #[test]
    fn still_process_does_not_move() {
        let x = em_step(&Still, &[1.0, -2.0], 0.1, &[0.7, 0.3], 0.5, 0.0).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
        let path = sde_path(&Still, &[1.0, -2.0], 1.0, 0.1, 0.5, 0.0, 3).unwrap();
        assert_eq!(path.len(), 11);
        assert!(path.states.chunks(2).all(|s| s == [1.0, -2.0]));
    }

    #[test]
    fn em_step_example() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let x = em_step(&p, &[1.0], 0.1, &[0.0], 0.01, 1.0).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn single_step_path_equals_em_step() {
        let p = GaussianMean::<f64>::new(2, 1.0).unwrap();
        let path = sde_path(&p, &[0.5, 1.0], 0.25, 0.25, 0.1, 1.0, 11).unwrap();
        assert_eq!(path.len(), 2);
        // regenerate the same draws from the same stream
        let mut rng = derive_stream(11, 0, "sde");
        let xi: Vec<f64> = (0..2).map(|_| f64::standard_normal(&mut rng)).collect();
        let expect = em_step(&p, &[0.5, 1.0], 0.25, &xi, 0.1, 1.0).unwrap();
        assert_eq!(path.state(1), expect.as_slice());
    }

    #[test]
    fn non_positive_dt_rejected() {
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        assert!(em_step(&p, &[0.0], 0.0, &[0.0], 0.1, 1.0).is_err());
        assert!(sde_path(&p, &[0.0], 1.0, 2.0, 0.1, 1.0, 0).is_err());
    }

    #[test]
    fn ou_mean_decays_exponentially() {
        // eta = 0 leaves dX = -X dt + dB: E X_T = exp(-T) x0.
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let (t, dt, x0, n) = (1.0, 0.001, 2.0, 10_000);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let mut rng = derive_stream(21, i, "ou-mean");
            let path = sde_path_with_stream(&p, &[x0], t, dt, 0.0, 1.0, &mut rng).unwrap();
            let x = path.state(path.len() - 1)[0];
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        let oracle = (-t as f64).exp() * x0;
        assert!((mean - oracle).abs() < 4.0 * se + 1e-3, "{mean} vs {oracle}");
    }

    #[test]
    fn ou_stationary_variance() {
        // Var X_T -> (eta sigma2 + delta) / 2 for T large, dt small.
        let p = GaussianMean::<f64>::new(1, 1.0).unwrap();
        let (eta, delta) = (0.2, 1.0);
        let n = 20_000;
        let mut em = EulerMaruyama::new(1, 0.01, eta, delta).unwrap();
        let mut xs = Vec::with_capacity(n);
        let mut rng = derive_stream(8, 0, "ou-var");
        let mut xi = [0.0];
        for _ in 0..n {
            let mut x = [0.0];
            for _ in 0..1000 {
                em.step_with(&p, &mut x, &mut xi, &mut rng).unwrap();
            }
            xs.push(x[0]);
        }
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let oracle = (eta + delta) / 2.0;
        // EM bias is O(dt) (exact EM variance a / (2 - dt)); sampling se = v sqrt(2/n)
        let se = oracle * (2.0 / n as f64).sqrt();
        assert!((var - oracle).abs() < 4.0 * se + 0.01 * oracle, "{var} vs {oracle}");
    }
}
