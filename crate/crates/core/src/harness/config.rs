use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problems::{ProblemSpec, TestFunctionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TailRatio,
    BerryEsseen,
    W1Scan,
    AuditDecomposition,
    AuditAssumptions,
    SteinCheck,
    ExpMoment,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::TailRatio,
        Experiment::BerryEsseen,
        Experiment::W1Scan,
        Experiment::AuditDecomposition,
        Experiment::AuditAssumptions,
        Experiment::SteinCheck,
        Experiment::ExpMoment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::TailRatio => "tail-ratio",
            Experiment::BerryEsseen => "berry-esseen",
            Experiment::W1Scan => "w1-scan",
            Experiment::AuditDecomposition => "audit-decomposition",
            Experiment::AuditAssumptions => "audit-assumptions",
            Experiment::SteinCheck => "stein-check",
            Experiment::ExpMoment => "exp-moment",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment {name:?}")))
    }
}

/// How the step size is chosen for each recorded length `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum EtaRule {
    /// Every listed value is paired with every `m`.
    Fixed { values: Vec<f64> },
    /// `eta = m^exponent`.
    Power { exponent: f64 },
    /// `eta` solving `m = c eta^-2 / |ln eta|`.
    Coupled {
        #[serde(default = "default_c")]
        c: f64,
    },
}

fn default_c() -> f64 {
    1.0
}

impl EtaRule {
    pub fn etas(&self, m: usize) -> Result<Vec<f64>> {
        let mf = m as f64;
        let etas = match self {
            EtaRule::Fixed { values } => values.clone(),
            EtaRule::Power { exponent } => vec![mf.powf(*exponent)],
            EtaRule::Coupled { c } => vec![coupled_eta(mf, *c)?],
        };
        if etas.is_empty() || etas.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::Config(format!("eta rule produced invalid step sizes {etas:?}")));
        }
        Ok(etas)
    }
}

/// Solves `m = c eta^-2 / |ln eta|` on `(0, e^{-1/2})`, where the right side is decreasing.
pub fn coupled_eta(m: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("coupling constant must be positive, got {c}")));
    }
    let g = |eta: f64| c / (eta * eta * -eta.ln());
    let (mut lo, mut hi) = (1e-300f64.sqrt(), (-0.5f64).exp());
    if m < g(hi) {
        return Err(Error::Config(format!("m = {m} is below the minimum {:.3} of the coupled rule", g(hi))));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pass/fail thresholds used by the experiment summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// `|ratio - 1|` bound for tail tables.
    pub tail_ratio: f64,
    /// Relative bound on the decomposition identity.
    pub identity: f64,
    /// Standard errors allowed for martingale moment comparisons.
    pub moment_z: f64,
    /// Standard errors allowed for closed-form oracle comparisons.
    pub oracle_z: f64,
    /// Factor applied to the predicted ratio of Kolmogorov distances.
    pub berry_esseen_band: f64,
    /// Absolute error bound for Monte Carlo Stein values.
    pub stein_abs: f64,
    /// Bound on the analytic-field residual.
    pub residual: f64,
    /// Fraction of divergent replications that fails a run.
    pub max_divergence_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tail_ratio: 0.15,
            identity: 1e-8,
            moment_z: 4.0,
            oracle_z: 3.0,
            berry_esseen_band: 0.5,
            stein_abs: 0.05,
            residual: 1e-12,
            max_divergence_fraction: 0.01,
        }
    }
}

/// Monte Carlo Stein settings for `stein-check` and for grid-backed fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteinSettings {
    /// Defaults to `ln(1e5) / K1`.
    pub horizon: Option<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub residual_points: usize,
    pub residual_radius: f64,
    /// Grid used when no analytic field exists (`d <= 2`).
    pub grid_nodes: usize,
    pub grid_half_width: f64,
}

impl Default for SteinSettings {
    fn default() -> Self {
        Self {
            horizon: None,
            dt: 0.01,
            n_paths: 10_000,
            residual_points: 20,
            residual_radius: 5.0,
            grid_nodes: 41,
            grid_half_width: 6.0,
        }
    }
}

/// Settings for `audit-assumptions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationSettings {
    pub n_pairs: usize,
    pub radius: f64,
    pub gamma: f64,
    pub n_samples: usize,
    pub cap: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { n_pairs: 10_000, radius: 10.0, gamma: 0.05, n_samples: 10_000, cap: 1e6 }
    }
}

fn default_burn_in_factor() -> f64 {
    crate::dynamics::DEFAULT_BURN_IN_FACTOR
}

fn default_gamma() -> f64 {
    0.05
}

fn default_h() -> TestFunctionSpec {
    TestFunctionSpec::Linear { direction: vec![1.0], offset: 0.0, scale: 1.0 }
}

/// Full description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub problem: ProblemSpec,
    #[serde(default = "default_h")]
    pub h: TestFunctionSpec,
    pub eta: EtaRule,
    pub delta: f64,
    /// Recorded chain lengths.
    pub m: Vec<usize>,
    /// Burn-in of `ceil(factor / eta)` steps.
    #[serde(default = "default_burn_in_factor")]
    pub burn_in_factor: f64,
    /// Replications per `(m, eta)`; sample count for `w1-scan`.
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub x_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Keep noise logs and write the first replication's trajectory per point.
    #[serde(default)]
    pub audit: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub stein: SteinSettings,
    #[serde(default)]
    pub validation: ValidationSettings,
    /// Exponent of the exponential-moment diagnostic.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Starting point before burn-in; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let needs_chains = self.experiment != Experiment::AuditAssumptions && self.experiment != Experiment::SteinCheck;
        if needs_chains && self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.m.is_empty() || self.m.contains(&0) {
            return Err(Error::Config("m list must be non-empty with positive entries".into()));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("delta must be non-negative, got {}", self.delta)));
        }
        if !(self.burn_in_factor >= 0.0) {
            return Err(Error::Config("burn_in_factor must be non-negative".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match self.experiment {
            Experiment::TailRatio if self.x_grid.is_empty() => {
                Err(Error::Config("tail-ratio needs a non-empty x_grid".into()))
            }
            Experiment::BerryEsseen if self.m.len() < 2 => {
                Err(Error::Config("berry-esseen needs at least two values of m".into()))
            }
            _ => Ok(()),
        }
    }

    /// Hash of the fields that determine the outputs (excludes `out`, `workers`, `audit`).
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = None;
        canon.workers = None;
        canon.audit = false;
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `(m, eta)` pairs in run order.
    pub fn points(&self) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for &m in &self.m {
            for eta in self.eta.etas(m)? {
                out.push((m, eta));
            }
        }
        Ok(out)
    }

    pub fn burn_in(&self, eta: f64) -> usize {
        crate::dynamics::default_burn_in(eta, self.burn_in_factor)
    }
}
