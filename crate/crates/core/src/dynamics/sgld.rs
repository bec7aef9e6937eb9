use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stream::{derive_stream, Stream};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::scalar::{norm, to_f64_vec, Real};

/// States with norm above this abort the chain.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Burn-in of `ceil(c / eta)` steps gives roughly `exp(-c)` mixing.
pub const DEFAULT_BURN_IN_FACTOR: f64 = 20.0;

pub fn default_burn_in(eta: f64, factor: f64) -> usize {
    if eta > 0.0 {
        (factor / eta).ceil() as usize
    } else {
        0
    }
}

/// Parameters of one SGLD run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig<T> {
    /// Step size.
    pub eta: T,
    /// Inverse temperature (scale of the injected noise).
    pub delta: T,
    /// Number of recorded states.
    pub m: usize,
    /// Steps discarded before recording.
    pub burn_in: usize,
    pub seed: u64,
    pub initial_state: Vec<T>,
    /// Keep the `(zeta, xi)` draws of the recorded steps.
    #[serde(default)]
    pub keep_noise: bool,
}

impl<T: Real> ChainConfig<T> {
    /// Config with the default burn-in `ceil(20 / eta)`.
    pub fn new(eta: T, delta: T, m: usize, seed: u64, initial_state: Vec<T>) -> Self {
        Self {
            eta,
            delta,
            m,
            burn_in: default_burn_in(eta.as_f64(), DEFAULT_BURN_IN_FACTOR),
            seed,
            initial_state,
            keep_noise: false,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_noise_log(mut self) -> Self {
        self.keep_noise = true;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("chain length m must be at least 1".into()));
        }
        if !(self.eta >= T::zero()) || !self.eta.is_finite() {
            return Err(Error::Config(format!("step size must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.delta >= T::zero()) || !self.delta.is_finite() {
            return Err(Error::Config(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if self.initial_state.len() != dim {
            return Err(Error::Config(format!(
                "initial state has dimension {}, problem has {dim}",
                self.initial_state.len()
            )));
        }
        Ok(())
    }

    /// Non-fatal warnings: `eta L >= 1` and the horizon `m eta`.
    pub fn warnings(&self, lipschitz: T) -> Vec<String> {
        let mut w = Vec::new();
        if self.eta * lipschitz >= T::one() {
            w.push(format!("eta * L = {} >= 1: chain may be unstable", self.eta * lipschitz));
        }
        let horizon = self.eta * T::lit(self.m as f64);
        if horizon < T::one() {
            w.push(format!("m * eta = {horizon} is below 1"));
        }
        w
    }
}

/// The `(zeta_{k+1}, xi_{k+1})` draws that moved `w_k` to `w_{k+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLog<T> {
    pub zeta_dim: usize,
    /// Flattened `m x r`.
    pub zetas: Vec<T>,
    /// Flattened `m x d`.
    pub xis: Vec<T>,
}

impl<T: Real> NoiseLog<T> {
    pub fn zeta(&self, k: usize) -> &[T] {
        &self.zetas[k * self.zeta_dim..(k + 1) * self.zeta_dim]
    }
}

/// Recorded states `w_0 .. w_{m-1}` plus the state `w_m` after the last step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dim: usize,
    pub eta: T,
    pub delta: T,
    /// Flattened `m x d`.
    pub states: Vec<T>,
    pub final_state: Vec<T>,
    pub noise: Option<NoiseLog<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.states.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter_states(&self) -> impl Iterator<Item = &[T]> {
        self.states.chunks_exact(self.dim.max(1))
    }

    /// `w_{k+1}`, including the final state for `k = m - 1`.
    pub fn next_state(&self, k: usize) -> &[T] {
        if k + 1 < self.len() {
            self.state(k + 1)
        } else {
            &self.final_state
        }
    }

    /// `xi_{k+1}`; requires a noise log.
    pub fn xi(&self, k: usize) -> Result<&[T]> {
        let n = self.noise.as_ref().ok_or(Error::MissingNoiseLog)?;
        Ok(&n.xis[k * self.dim..(k + 1) * self.dim])
    }

    /// Writes `k, w_1..w_d` rows (plus `zeta_*`, `xi_*` columns when the noise
    /// log is present and requested).
    pub fn write_csv(&self, path: &Path, include_noise: bool) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let noise = if include_noise { self.noise.as_ref() } else { None };
        let mut header: Vec<String> = vec!["k".into()];
        header.extend((1..=self.dim).map(|i| format!("w_{i}")));
        if let Some(n) = noise {
            header.extend((1..=n.zeta_dim).map(|i| format!("zeta_{i}")));
            header.extend((1..=self.dim).map(|i| format!("xi_{i}")));
        }
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.state(k).iter().map(|v| format!("{:.16e}", v.as_f64())));
            if let Some(n) = noise {
                row.extend(n.zeta(k).iter().map(|v| format!("{:.16e}", v.as_f64())));
                row.extend(self.xi(k)?.iter().map(|v| format!("{:.16e}", v.as_f64())));
            }
            writeln!(out, "{}", row.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Allocation-free SGLD update `w <- w - eta grad psi(w, zeta) + sqrt(eta delta) xi`.
#[derive(Clone, Debug)]
pub struct SgldKernel<T> {
    eta: T,
    noise_scale: T,
    grad: Vec<T>,
}

impl<T: Real> SgldKernel<T> {
    pub fn new(dim: usize, eta: T, delta: T) -> Self {
        Self { eta, noise_scale: (eta * delta).sqrt(), grad: vec![T::zero(); dim] }
    }

    /// Applies one update in place. On a non-finite gradient the state is left
    /// untouched and `Err(())` is returned.
    #[inline]
    #[allow(clippy::result_unit_err)]
    pub fn step<P: Problem<T> + ?Sized>(
        &mut self,
        problem: &P,
        w: &mut [T],
        zeta: &[T],
        xi: &[T],
    ) -> std::result::Result<(), ()> {
        problem.grad_psi(w, zeta, &mut self.grad);
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(());
        }
        for ((wi, &gi), &xii) in w.iter_mut().zip(&self.grad).zip(xi) {
            *wi = *wi - self.eta * gi + self.noise_scale * xii;
        }
        Ok(())
    }
}

/// One SGLD update from explicit draws.
pub fn sgld_step<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    w: &[T],
    zeta: &[T],
    xi: &[T],
    eta: T,
    delta: T,
) -> Result<Vec<T>> {
    let mut next = w.to_vec();
    SgldKernel::new(w.len(), eta, delta).step(problem, &mut next, zeta, xi).map_err(|_| divergence(0, w))?;
    Ok(next)
}

fn divergence<T: Real>(step: usize, w: &[T]) -> Error {
    Error::Divergence { step, norm: norm(w).as_f64(), state: to_f64_vec(w) }
}

/// Runs the chain from the config's seed (stream tag `"chain"`, index 0).
pub fn run_chain<T: Real, P: Problem<T> + ?Sized>(problem: &P, config: &ChainConfig<T>) -> Result<Trajectory<T>> {
    let mut rng = derive_stream(config.seed, 0, "chain");
    let d = problem.dim();
    let mut states = Vec::with_capacity(config.m * d);
    let mut noise = config.keep_noise.then(|| NoiseLog {
        zeta_dim: problem.zeta_dim(),
        zetas: Vec::with_capacity(config.m * problem.zeta_dim()),
        xis: Vec::with_capacity(config.m * d),
    });
    let final_state = run_chain_streaming(problem, config, &mut rng, |_, w, draws| {
        states.extend_from_slice(w);
        if let (Some(log), Some((zeta, xi))) = (noise.as_mut(), draws) {
            log.zetas.extend_from_slice(zeta);
            log.xis.extend_from_slice(xi);
        }
    })?;
    Ok(Trajectory { dim: d, eta: config.eta, delta: config.delta, states, final_state, noise })
}

/// Core chain loop.
///
/// Runs `burn_in` unrecorded steps, then calls `visit(k, w_k, draws)` for
/// `k = 0..m`, where `draws` holds the `(zeta_{k+1}, xi_{k+1})` about to be
/// applied (only when `config.keep_noise`). Returns `w_m`.
pub fn run_chain_streaming<T, P, F>(
    problem: &P,
    config: &ChainConfig<T>,
    rng: &mut Stream,
    mut visit: F,
) -> Result<Vec<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    F: FnMut(usize, &[T], Option<(&[T], &[T])>),
{
    let d = problem.dim();
    config.validate(d)?;
    let mut kernel = SgldKernel::new(d, config.eta, config.delta);
    let mut w = config.initial_state.clone();
    let mut zeta = vec![T::zero(); problem.zeta_dim()];
    let mut xi = vec![T::zero(); d];
    let limit = T::lit(DIVERGENCE_THRESHOLD);
    let total = config.burn_in + config.m;
    for step in 0..total {
        problem.sample_zeta(rng, &mut zeta);
        for x in xi.iter_mut() {
            *x = T::standard_normal(rng);
        }
        if step >= config.burn_in {
            let k = step - config.burn_in;
            let draws = config.keep_noise.then_some((zeta.as_slice(), xi.as_slice()));
            visit(k, &w, draws);
        }
        kernel.step(problem, &mut w, &zeta, &xi).map_err(|_| divergence(step, &w))?;
        let n = norm(&w);
        if !(n <= limit) {
            return Err(divergence(step + 1, &w));
        }
    }
    Ok(w)
}

/// Re-applies a trajectory's noise log from its first state.
pub fn replay<T: Real, P: Problem<T> + ?Sized>(problem: &P, trajectory: &Trajectory<T>) -> Result<Vec<T>> {
    let log = trajectory.noise.as_ref().ok_or(Error::MissingNoiseLog)?;
    let d = trajectory.dim;
    let mut kernel = SgldKernel::new(d, trajectory.eta, trajectory.delta);
    let mut w = trajectory.state(0).to_vec();
    let mut states = Vec::with_capacity(trajectory.states.len() + d);
    for k in 0..trajectory.len() {
        states.extend_from_slice(&w);
        kernel.step(problem, &mut w, log.zeta(k), &log.xis[k * d..(k + 1) * d]).map_err(|_| divergence(k, &w))?;
    }
    states.extend_from_slice(&w);
    Ok(states)
}
