use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{EtaRule, Experiment, ExperimentConfig};
use super::output::{emit_csv, emit_json, Table};
use super::regime::{theorem_regime, Regime};
use crate::dynamics::{derive_seed, derive_stream, run_chain_streaming, ChainConfig, NoiseLog, Trajectory};
use crate::error::{Error, Result};
use crate::problems::{
    check_dissipativity, check_lipschitz, check_subgaussian, sample_ball, AnyProblem, Problem, TestFunction, TestKind,
};
use crate::scalar::{dot, Real};
use crate::stats::{
    checkpoints, gaussian_w1, ks_distance, mirrored_tail_ratio_table, moments, tail_ratio_table, w1_with_error,
    ChainAccumulator, Detail, ExpMomentAccumulator, ReplicationResult,
};
use crate::stein::{
    analytic_stein_ou, default_horizon, estimate_pi_h, grid_field, stein_f_mc, stein_residual_check, GridSpec,
    McSteinConfig, SteinField,
};

pub const VERSION_TAG: &str = concat!("sgld-core ", env!("CARGO_PKG_VERSION"));

/// One named pass/fail outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub m: usize,
    pub eta: f64,
    pub delta: f64,
    pub seed: u64,
    pub burn_in: usize,
    pub regime: Regime,
    pub replications: usize,
    pub divergences: usize,
    pub elapsed_ms: f64,
}

/// Everything needed to reproduce and interpret a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub workers: usize,
    pub points: Vec<PointRecord>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub summary: serde_json::Value,
    /// Output columns containing NaN values.
    pub nan_columns: Vec<String>,
    pub warnings: Vec<String>,
    pub elapsed_ms: f64,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub table: Table,
    /// First-replication trajectories kept in audit mode, keyed by file stem.
    pub trajectories: Vec<(String, Trajectory<f64>)>,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.manifest.pass
    }

    /// Writes `manifest.json`, `<experiment>.csv` and, in audit mode, trajectory CSVs.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.manifest.experiment.name()));
        emit_csv(&self.table, &csv)?;
        let manifest = dir.join("manifest.json");
        emit_json(&self.manifest, &manifest)?;
        let mut written = vec![manifest, csv];
        for (stem, traj) in &self.trajectories {
            let path = dir.join(format!("{stem}.csv"));
            traj.write_csv(&path, true)?;
            written.push(path);
        }
        Ok(written)
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    problem: AnyProblem<f64>,
    h: TestFunction<f64>,
    hash: String,
    warnings: Vec<String>,
}

type Field = Box<dyn SteinField<f64>>;

/// Runs the configured experiment. Replications execute on a pool of
/// `cfg.workers` threads (the global pool when unset) and are merged by index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = cfg.problem.build::<f64>()?;
    let h = cfg.h.build::<f64>()?;
    if h.dim() != problem.dim() {
        return Err(Error::Config(format!(
            "test function dimension {} differs from problem dimension {}",
            h.dim(),
            problem.dim()
        )));
    }
    if let Some(x0) = &cfg.initial_state {
        if x0.len() != problem.dim() {
            return Err(Error::Config("initial_state has the wrong dimension".into()));
        }
    }
    let mut ctx = Context { cfg, problem, h, hash: cfg.config_hash(), warnings: Vec::new() };
    let pool = match cfg.workers {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?,
        ),
        None => None,
    };
    let workers = pool.as_ref().map_or_else(rayon::current_num_threads, |p| p.current_num_threads());
    let body = |ctx: &mut Context| match cfg.experiment {
        Experiment::TailRatio => tail_ratio(ctx),
        Experiment::BerryEsseen => berry_esseen(ctx),
        Experiment::W1Scan => w1_scan(ctx),
        Experiment::AuditDecomposition => audit_decomposition(ctx),
        Experiment::AuditAssumptions => audit_assumptions(ctx),
        Experiment::SteinCheck => stein_check(ctx),
        Experiment::ExpMoment => exp_moment(ctx),
    };
    let partial = match &pool {
        Some(p) => p.install(|| body(&mut ctx)),
        None => body(&mut ctx),
    }?;
    let pass = !partial.checks.is_empty() && partial.checks.iter().all(|c| c.pass);
    let mut warnings = ctx.warnings;
    for p in &partial.points {
        warnings.extend(p.regime.warnings.iter().map(|w| format!("m={}, eta={}: {w}", p.m, p.eta)));
    }
    let manifest = RunManifest {
        version: VERSION_TAG.to_string(),
        experiment: cfg.experiment,
        config: cfg.clone(),
        config_hash: ctx.hash,
        workers,
        points: partial.points,
        checks: partial.checks,
        pass,
        summary: partial.summary,
        nan_columns: partial.table.nan_columns(),
        warnings,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(RunOutcome { manifest, table: partial.table, trajectories: partial.trajectories })
}

struct Partial {
    table: Table,
    points: Vec<PointRecord>,
    checks: Vec<Check>,
    summary: serde_json::Value,
    trajectories: Vec<(String, Trajectory<f64>)>,
}

impl Partial {
    fn new(table: Table) -> Self {
        Self { table, points: Vec::new(), checks: Vec::new(), summary: json!({}), trajectories: Vec::new() }
    }
}

/// Stein field and `pi(h)` at step size `eta`.
fn build_field(ctx: &mut Context, eta: f64, seed: u64) -> Result<(Field, f64)> {
    let cfg = ctx.cfg;
    if let (Some(law), false) = (ctx.problem.analytic(), matches!(ctx.h.kind(), TestKind::Custom { .. })) {
        let field = analytic_stein_ou(&ctx.h, law.diffusion(eta, cfg.delta))?;
        let pi_h = field.pi_h();
        return Ok((Box::new(field), pi_h));
    }
    let d = ctx.problem.dim();
    if d > 2 {
        return Err(Error::Config("no Stein solver available: no closed form and dimension above 2".into()));
    }
    let s = &cfg.stein;
    let pi = estimate_pi_h(&ctx.problem, &ctx.h, eta, cfg.delta, s.dt, derive_seed(seed, 0, "pi-h"))?;
    let horizon = s.horizon.unwrap_or_else(|| default_horizon(ctx.problem.constants().k1));
    let mut mc = McSteinConfig::new(eta, cfg.delta, horizon).with_dt(s.dt).with_paths(s.n_paths);
    mc.seed = derive_seed(seed, 0, "stein");
    let spec = GridSpec {
        lower: vec![-s.grid_half_width; d],
        upper: vec![s.grid_half_width; d],
        nodes: vec![s.grid_nodes; d],
    };
    ctx.warnings.push(format!(
        "eta={eta}: Stein field interpolated from a Monte Carlo grid; pi(h) = {} +- {}",
        pi.estimate, pi.std_error
    ));
    let field = grid_field(&ctx.problem, &ctx.h, spec, &mc, pi.estimate)?;
    Ok((Box::new(field), pi.estimate))
}

struct PointRun {
    results: Vec<ReplicationResult>,
    exp_values: Vec<Vec<f64>>,
    divergences: usize,
    first: Option<Trajectory<f64>>,
}

/// Runs `R` replications of the chain at `(m, eta)`.
fn run_point(
    ctx: &Context,
    field: &dyn SteinField<f64>,
    pi_h: f64,
    m: usize,
    eta: f64,
    seed: u64,
    detail: Detail,
    exp_ks: Option<&[usize]>,
) -> Result<PointRun> {
    let cfg = ctx.cfg;
    let d = ctx.problem.dim();
    let x0 = cfg.initial_state.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut chain = ChainConfig::new(eta, cfg.delta, m, seed, x0).with_burn_in(cfg.burn_in(eta));
    chain.keep_noise = detail >= Detail::Martingale || cfg.audit;
    let outcomes: Vec<Result<Option<(ReplicationResult, Vec<f64>, Option<Trajectory<f64>>)>>> = (0..cfg.replications
        as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_stream(seed, r, "chain");
            let mut acc = ChainAccumulator::new(field, &ctx.problem, &ctx.h, eta, cfg.delta, detail)?;
            let mut exp_vals = Vec::new();
            let keep = cfg.audit && r == 0;
            let mut states = Vec::new();
            let mut log = NoiseLog { zeta_dim: ctx.problem.zeta_dim(), zetas: Vec::new(), xis: Vec::new() };
            let mut failure = None;
            let run = run_chain_streaming(&ctx.problem, &chain, &mut rng, |k, w, draws| {
                if failure.is_some() {
                    return;
                }
                if let Err(e) = acc.visit(w, draws) {
                    failure = Some(e);
                }
                if let Some(ks) = exp_ks {
                    if ks.binary_search(&k).is_ok() {
                        exp_vals.push((cfg.gamma * dot(w, w)).exp());
                    }
                }
                if keep {
                    states.extend_from_slice(w);
                    if let Some((z, x)) = draws {
                        log.zetas.extend_from_slice(z);
                        log.xis.extend_from_slice(x);
                    }
                }
            });
            let last = match run {
                Ok(last) => last,
                Err(Error::Divergence { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            if let Some(e) = failure {
                return Err(e);
            }
            let stats = acc.finish(&last, pi_h)?;
            let mut rec = ReplicationResult::from_stats(r, seed, &ctx.hash, eta, cfg.delta, &stats);
            if exp_ks.is_some() {
                rec.exp_moment = Some(exp_vals.clone());
            }
            let traj = keep.then(|| Trajectory {
                dim: d,
                eta,
                delta: cfg.delta,
                states,
                final_state: last,
                noise: chain.keep_noise.then_some(log),
            });
            Ok(Some((rec, exp_vals, traj)))
        })
        .collect();
    let mut run = PointRun { results: Vec::new(), exp_values: Vec::new(), divergences: 0, first: None };
    for o in outcomes {
        match o? {
            Some((rec, exp_vals, traj)) => {
                run.results.push(rec);
                run.exp_values.push(exp_vals);
                if traj.is_some() {
                    run.first = traj;
                }
            }
            None => run.divergences += 1,
        }
    }
    Ok(run)
}

fn point_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, index as u64, "point")
}

fn record(ctx: &Context, m: usize, eta: f64, seed: u64, run: &PointRun, started: Instant) -> PointRecord {
    PointRecord {
        m,
        eta,
        delta: ctx.cfg.delta,
        seed,
        burn_in: ctx.cfg.burn_in(eta),
        regime: theorem_regime(m, eta, ctx.cfg.delta),
        replications: ctx.cfg.replications,
        divergences: run.divergences,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

fn divergence_check(ctx: &Context, rec: &PointRecord) -> Option<Check> {
    let limit = ctx.cfg.tolerances.max_divergence_fraction * ctx.cfg.replications as f64;
    (rec.divergences > 0).then(|| {
        Check::new(
            format!("divergences m={} eta={}", rec.m, rec.eta),
            rec.divergences as f64 <= limit,
            format!("{} of {} replications diverged", rec.divergences, ctx.cfg.replications),
        )
    })
}

/// Runs every `(m, eta)` point with the given detail and hands results to `each`.
fn for_each_point(
    ctx: &mut Context,
    partial: &mut Partial,
    detail: Detail,
    exp_moment: bool,
    mut each: impl FnMut(&Context, &mut Partial, &PointRecord, &PointRun) -> Result<()>,
) -> Result<()> {
    for (i, (m, eta)) in ctx.cfg.points()?.into_iter().enumerate() {
        let started = Instant::now();
        let seed = point_seed(ctx.cfg, i);
        let (field, pi_h) = build_field(ctx, eta, seed)?;
        let detail = if detail == Detail::Components && !field.has_hessian() { Detail::Martingale } else { detail };
        let ks = exp_moment.then(|| checkpoints(m));
        let mut run = run_point(ctx, field.as_ref(), pi_h, m, eta, seed, detail, ks.as_deref())?;
        let rec = record(ctx, m, eta, seed, &run, started);
        if run.results.is_empty() {
            return Err(Error::Diagnostic(format!("every replication diverged at m={m}, eta={eta}")));
        }
        if let Some(c) = divergence_check(ctx, &rec) {
            partial.checks.push(c);
        }
        if let Some(t) = run.first.take() {
            partial.trajectories.push((format!("trajectory_m{m}_p{i}"), t));
        }
        each(ctx, partial, &rec, &run)?;
        partial.points.push(rec);
    }
    Ok(())
}

fn w_values(run: &PointRun) -> Vec<f64> {
    run.results.iter().map(|r| r.w_eta).collect()
}

fn tail_ratio(ctx: &mut Context) -> Result<Partial> {
    let mut partial = Partial::new(Table::new(
        "tail-ratio",
        &["m", "eta", "delta", "regime", "side", "x", "p_hat", "normal_tail", "ratio", "stderr", "n"],
    ));
    let mut worst = Vec::new();
    for_each_point(ctx, &mut partial, Detail::Basic, false, |ctx, partial, rec, run| {
        let w = w_values(run);
        let tol = ctx.cfg.tolerances.tail_ratio;
        for table in [tail_ratio_table(&w, &ctx.cfg.x_grid)?, mirrored_tail_ratio_table(&w, &ctx.cfg.x_grid)?] {
            let side = if table.mirrored { "-" } else { "+" };
            for row in &table.rows {
                partial.table.push(vec![
                    rec.m.into(),
                    rec.eta.into(),
                    rec.delta.into(),
                    rec.regime.tag.as_str().into(),
                    side.into(),
                    row.x.into(),
                    row.p_hat.into(),
                    row.normal_tail.into(),
                    row.ratio.into(),
                    row.stderr.into(),
                    table.n_samples.into(),
                ]);
            }
            let dev = table.max_deviation();
            worst.push(json!({"m": rec.m, "eta": rec.eta, "side": side, "max_deviation": dev}));
            partial.checks.push(Check::new(
                format!("tail-ratio m={} side={side}", rec.m),
                dev <= tol,
                format!("max |ratio - 1| = {dev:.4} (bound {tol})"),
            ));
        }
        Ok(())
    })?;
    partial.summary = json!({ "max_deviation": worst });
    Ok(partial)
}

/// `m^{-1/4} ln m`.
pub fn berry_esseen_scale(m: usize) -> f64 {
    let m = m as f64;
    m.powf(-0.25) * m.ln()
}

fn berry_esseen(ctx: &mut Context) -> Result<Partial> {
    let mut partial =
        Partial::new(Table::new("berry-esseen", &["m", "eta", "delta", "regime", "n", "ks", "predicted_scale"]));
    let mut series: Vec<(usize, f64, f64)> = Vec::new();
    for_each_point(ctx, &mut partial, Detail::Basic, false, |_, partial, rec, run| {
        let ks = ks_distance(&w_values(run))?;
        partial.table.push(vec![
            rec.m.into(),
            rec.eta.into(),
            rec.delta.into(),
            rec.regime.tag.as_str().into(),
            run.results.len().into(),
            ks.into(),
            berry_esseen_scale(rec.m).into(),
        ]);
        series.push((rec.m, rec.eta, ks));
        Ok(())
    })?;
    // one series per fixed eta, otherwise the whole schedule
    let mut groups: Vec<Vec<(usize, f64, f64)>> = Vec::new();
    match &ctx.cfg.eta {
        EtaRule::Fixed { values } => {
            for &v in values {
                groups.push(series.iter().copied().filter(|p| p.1 == v).collect());
            }
        }
        _ => groups.push(series.clone()),
    }
    let band = ctx.cfg.tolerances.berry_esseen_band;
    for g in &mut groups {
        g.sort_by_key(|p| p.0);
        let label =
            if matches!(ctx.cfg.eta, EtaRule::Fixed { .. }) { format!(" eta={}", g[0].1) } else { String::new() };
        let decreasing = g.windows(2).all(|w| w[1].2 < w[0].2);
        partial.checks.push(Check::new(
            format!("ks strictly decreasing{label}"),
            decreasing,
            format!("{:?}", g.iter().map(|p| p.2).collect::<Vec<_>>()),
        ));
        let (first, last) = (g[0], g[g.len() - 1]);
        let observed = first.2 / last.2;
        let predicted = berry_esseen_scale(first.0) / berry_esseen_scale(last.0);
        partial.checks.push(Check::new(
            format!("ks ratio{label}"),
            observed >= band * predicted,
            format!("D({})/D({}) = {observed:.4}, required >= {:.4}", first.0, last.0, band * predicted),
        ));
    }
    partial.summary = json!({
        "ks": series.iter().map(|p| json!({"m": p.0, "eta": p.1, "ks": p.2})).collect::<Vec<_>>(),
    });
    Ok(partial)
}

fn w1_scan(ctx: &mut Context) -> Result<Partial> {
    let cfg = ctx.cfg;
    let law = ctx
        .problem
        .analytic()
        .ok_or_else(|| Error::Config("w1-scan needs a problem with a closed-form invariant law".into()))?;
    let slope = match ctx.h.kind() {
        TestKind::Linear { .. } => ctx.h.scale().abs(),
        _ => return Err(Error::Config("w1-scan projects through a linear test function".into())),
    };
    let mut partial = Partial::new(Table::new(
        "w1-scan",
        &["m", "eta", "delta", "regime", "n", "w1", "std_error", "closed_form", "z"],
    ));
    let n = cfg.replications;
    let d = ctx.problem.dim();
    let mut rows = Vec::new();
    for (i, (m, eta)) in cfg.points()?.into_iter().enumerate() {
        let started = Instant::now();
        let seed = point_seed(cfg, i);
        let x0 = cfg.initial_state.clone().unwrap_or_else(|| vec![0.0; d]);
        let chain = ChainConfig::new(eta, cfg.delta, 1, seed, x0).with_burn_in(cfg.burn_in(eta));
        let draws: Vec<Result<Option<(f64, f64)>>> = (0..n as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = derive_stream(seed, r, "chain");
                let mut end = 0.0;
                match run_chain_streaming(&ctx.problem, &chain, &mut rng, |_, w, _| end = ctx.h.evaluate(w)) {
                    Ok(_) => {}
                    Err(Error::Divergence { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
                let mut rng = derive_stream(seed, r, "pi-sample");
                let sd = law.sde_variance(eta, cfg.delta).sqrt();
                let x: Vec<f64> = (0..d).map(|_| sd * f64::standard_normal(&mut rng)).collect();
                Ok(Some((end, ctx.h.evaluate(&x))))
            })
            .collect();
        let (mut chain_s, mut pi_s, mut divergences) = (Vec::with_capacity(n), Vec::with_capacity(n), 0);
        for dr in draws {
            match dr? {
                Some((a, b)) => {
                    chain_s.push(a);
                    pi_s.push(b);
                }
                None => divergences += 1,
            }
        }
        let est = w1_with_error(&chain_s, &pi_s)?;
        let closed =
            slope * gaussian_w1(law.chain_variance(eta, cfg.delta).sqrt(), law.sde_variance(eta, cfg.delta).sqrt());
        let z = (est.value - closed) / est.std_error;
        let run = PointRun { results: Vec::new(), exp_values: Vec::new(), divergences, first: None };
        let rec = record(ctx, m, eta, seed, &run, started);
        if let Some(c) = divergence_check(ctx, &rec) {
            partial.checks.push(c);
        }
        partial.table.push(vec![
            m.into(),
            eta.into(),
            cfg.delta.into(),
            rec.regime.tag.as_str().into(),
            est.n.into(),
            est.value.into(),
            est.std_error.into(),
            closed.into(),
            z.into(),
        ]);
        partial.checks.push(Check::new(
            format!("w1 oracle eta={eta}"),
            z.abs() <= cfg.tolerances.oracle_z,
            format!("w1 = {:.6} +- {:.6}, closed form {closed:.6}, z = {z:.3}", est.value, est.std_error),
        ));
        rows.push((eta, est.value, est.std_error, closed));
        partial.points.push(rec);
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    if sorted.len() >= 2 {
        let increasing = sorted.windows(2).all(|w| w[1].1 > w[0].1);
        partial.checks.push(Check::new(
            "w1 increases with eta",
            increasing,
            format!("{:?}", sorted.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>()),
        ));
    }
    partial.summary = json!({
        "w1": rows.iter().map(|r| json!({"eta": r.0, "w1": r.1, "std_error": r.2, "closed_form": r.3})).collect::<Vec<_>>(),
    });
    Ok(partial)
}

fn audit_decomposition(ctx: &mut Context) -> Result<Partial> {
    let mut partial = Partial::new(Table::new(
        "audit-decomposition",
        &[
            "index",
            "m",
            "eta",
            "delta",
            "regime",
            "pi_hat",
            "y_eta",
            "w_eta",
            "h_eta",
            "r1",
            "r2",
            "r3",
            "r4",
            "r_residual",
            "identity_residual",
            "scaled_deviation",
        ],
    ));
    let mut summaries = Vec::new();
    for_each_point(ctx, &mut partial, Detail::Components, false, |ctx, partial, rec, run| {
        let tol = &ctx.cfg.tolerances;
        let mut worst_ratio = 0.0f64;
        let (mut max_r3, mut max_r4) = (0.0f64, 0.0f64);
        let components = run.results.iter().all(|r| r.r_components.is_some());
        for r in &run.results {
            let rc = r.r_components.map_or([f64::NAN; 4], |c| c);
            partial.table.push(vec![
                r.index.into(),
                rec.m.into(),
                rec.eta.into(),
                rec.delta.into(),
                rec.regime.tag.as_str().into(),
                r.pi_hat.into(),
                r.y_eta.into(),
                r.w_eta.into(),
                r.h_eta.into(),
                rc[0].into(),
                rc[1].into(),
                rc[2].into(),
                rc[3].into(),
                r.r_residual.into(),
                r.identity_residual.into(),
                r.scaled_deviation.into(),
            ]);
            if let Some(gap) = r.identity_residual {
                let ratio = gap.abs() / (1.0 + r.scaled_deviation.abs());
                worst_ratio = if ratio.is_nan() { f64::NAN } else { worst_ratio.max(ratio) };
            }
            max_r3 = max_r3.max(rc[2].abs());
            max_r4 = max_r4.max(rc[3].abs());
        }
        if components {
            partial.checks.push(Check::new(
                format!("decomposition identity m={} eta={}", rec.m, rec.eta),
                worst_ratio <= tol.identity,
                format!("max |gap| / (1 + |lhs|) = {worst_ratio:.3e} (bound {:e})", tol.identity),
            ));
        }
        let hs: Vec<f64> = run.results.iter().filter_map(|r| r.h_eta).collect();
        let ys: Vec<f64> = run.results.iter().map(|r| r.y_eta).collect();
        let mut point = json!({
            "m": rec.m, "eta": rec.eta, "max_identity_ratio": worst_ratio,
            "max_abs_r3": max_r3, "max_abs_r4": max_r4, "components": components,
        });
        if hs.len() >= 2 {
            let hm = moments(&hs)?;
            let ym = moments(&ys)?;
            let z = tol.moment_z;
            partial.checks.push(Check::new(
                format!("martingale mean m={} eta={}", rec.m, rec.eta),
                hm.mean.abs() <= z * hm.mean_se,
                format!("mean H = {:.5} +- {:.5}", hm.mean, hm.mean_se),
            ));
            let se = hm.variance_se.hypot(ym.mean_se);
            partial.checks.push(Check::new(
                format!("martingale variance m={} eta={}", rec.m, rec.eta),
                (hm.variance - ym.mean).abs() <= z * se,
                format!("var H = {:.5}, mean Y = {:.5}, se {:.5}", hm.variance, ym.mean, se),
            ));
            point["h_mean"] = json!(hm.mean);
            point["h_mean_se"] = json!(hm.mean_se);
            point["h_variance"] = json!(hm.variance);
            point["h_variance_se"] = json!(hm.variance_se);
            point["y_mean"] = json!(ym.mean);
            point["y_mean_se"] = json!(ym.mean_se);
        }
        summaries.push(point);
        Ok(())
    })?;
    partial.summary = json!({ "points": summaries });
    Ok(partial)
}

fn audit_assumptions(ctx: &mut Context) -> Result<Partial> {
    let cfg = ctx.cfg;
    let v = &cfg.validation;
    let mut partial =
        Partial::new(Table::new("audit-assumptions", &["check", "pass", "worst_value", "n_samples", "radius", "seed"]));
    let lip = check_lipschitz(&ctx.problem, v.n_pairs, v.radius, derive_seed(cfg.seed, 0, "check-lipschitz"))?;
    let dis = check_dissipativity(&ctx.problem, v.n_pairs, v.radius, derive_seed(cfg.seed, 1, "check-dissipativity"))?;
    let d = ctx.problem.dim();
    let grid: Vec<Vec<f64>> = (-2..=2)
        .map(|t| {
            let mut x = vec![0.0; d];
            x[0] = 0.5 * v.radius * t as f64;
            x
        })
        .collect();
    let sub = check_subgaussian(
        &ctx.problem,
        v.gamma,
        v.n_samples,
        &grid,
        v.cap,
        derive_seed(cfg.seed, 2, "check-subgaussian"),
    )?;
    for r in [&lip, &dis, &sub.summary] {
        partial.table.push(vec![
            r.check.clone().into(),
            r.pass.into(),
            r.worst_value.into(),
            r.n_samples.into(),
            r.radius.into(),
            r.seed.into(),
        ]);
        partial.checks.push(Check::new(r.check.clone(), r.pass, format!("worst value {}", r.worst_value)));
    }
    partial.summary = json!({
        "constants": ctx.problem.constants(),
        "lipschitz": lip,
        "dissipativity": dis,
        "subgaussian": sub,
    });
    Ok(partial)
}

fn stein_check(ctx: &mut Context) -> Result<Partial> {
    let cfg = ctx.cfg;
    let s = &cfg.stein;
    let eta = cfg.points()?[0].1;
    let d = ctx.problem.dim();
    let seed = point_seed(cfg, 0);
    let started = Instant::now();
    let mut partial =
        Partial::new(Table::new("stein-check", &["x", "estimate", "std_error", "bias_proxy", "reference", "error"]));
    let analytic = match (ctx.problem.analytic(), ctx.h.kind()) {
        (Some(law), k) if !matches!(k, TestKind::Custom { .. }) => {
            Some(analytic_stein_ou(&ctx.h, law.diffusion(eta, cfg.delta))?)
        }
        _ => None,
    };
    let pi_h = match &analytic {
        Some(f) => f.pi_h(),
        None => estimate_pi_h(&ctx.problem, &ctx.h, eta, cfg.delta, s.dt, derive_seed(seed, 0, "pi-h"))?.estimate,
    };
    let horizon = s.horizon.unwrap_or_else(|| default_horizon(ctx.problem.constants().k1));
    let mut mc = McSteinConfig::new(eta, cfg.delta, horizon).with_dt(s.dt).with_paths(s.n_paths);
    mc.seed = derive_seed(seed, 0, "stein");
    mc.tolerance = cfg.tolerances.stein_abs;
    let tol = cfg.tolerances.stein_abs;
    let mut errors = Vec::new();
    for &x in &cfg.x_grid {
        let mut point = vec![0.0; d];
        point[0] = x;
        let est = stein_f_mc(&ctx.problem, &ctx.h, &point, &mc, pi_h)?;
        let reference = match &analytic {
            Some(f) => f.f(&point)?,
            None => f64::NAN,
        };
        let err = est.estimate - reference;
        partial.table.push(vec![
            x.into(),
            est.estimate.into(),
            est.std_error.into(),
            est.bias_proxy.into(),
            reference.into(),
            err.into(),
        ]);
        if analytic.is_some() {
            partial.checks.push(Check::new(
                format!("stein value x={x}"),
                err.abs() <= tol,
                format!("estimate {:.5} +- {:.5}, reference {reference:.5}", est.estimate, est.std_error),
            ));
        }
        errors.push(json!({"x": x, "estimate": est.estimate, "std_error": est.std_error, "bias_proxy": est.bias_proxy, "error": err}));
    }
    let mut rng = derive_stream(seed, 0, "residual-points");
    let points: Vec<Vec<f64>> = (0..s.residual_points)
        .map(|_| {
            let mut p = vec![0.0; d];
            sample_ball(&mut rng, s.residual_radius, &mut p);
            p
        })
        .collect();
    let residual = match &analytic {
        Some(f) => {
            let rep = stein_residual_check(f, &ctx.problem, &ctx.h, eta, cfg.delta, &points)?;
            let pass = rep.max_residual <= cfg.tolerances.residual;
            partial.checks.push(Check::new(
                "analytic residual",
                pass,
                format!(
                    "max residual {:e} over {} points (bound {:e})",
                    rep.max_residual, rep.n_points, cfg.tolerances.residual
                ),
            ));
            rep
        }
        None => {
            let field = crate::stein::McSteinField::new(ctx.problem.clone(), ctx.h.clone(), mc.clone(), pi_h)?;
            let rep = stein_residual_check(&field, &ctx.problem, &ctx.h, eta, cfg.delta, &points)?;
            partial.checks.push(Check::new(
                "monte carlo residual",
                rep.pass,
                format!("max residual {:e}", rep.max_residual),
            ));
            rep
        }
    };
    let run = PointRun { results: Vec::new(), exp_values: Vec::new(), divergences: 0, first: None };
    partial.points.push(record(ctx, cfg.m[0], eta, seed, &run, started));
    partial.summary = json!({ "pi_h": pi_h, "horizon": horizon, "values": errors, "residual": residual });
    Ok(partial)
}

fn exp_moment(ctx: &mut Context) -> Result<Partial> {
    let mut partial = Partial::new(Table::new(
        "exp-moment",
        &["m", "eta", "delta", "regime", "k", "mean", "std_error", "oracle", "z"],
    ));
    let gamma = ctx.cfg.gamma;
    let mut curves = Vec::new();
    for_each_point(ctx, &mut partial, Detail::Basic, true, |ctx, partial, rec, run| {
        let mut acc = ExpMomentAccumulator::new(gamma, checkpoints(rec.m))?;
        for v in &run.exp_values {
            acc.push(v);
        }
        let curve = acc.finish()?;
        let d = ctx.problem.dim() as f64;
        let oracle = ctx.problem.analytic().map(|law| {
            let v = law.chain_variance(rec.eta, ctx.cfg.delta);
            let base = 1.0 - 2.0 * gamma * v;
            if base > 0.0 {
                base.powf(-0.5 * d)
            } else {
                f64::INFINITY
            }
        });
        let zmax = ctx.cfg.tolerances.oracle_z;
        for p in &curve.points {
            let o = oracle.unwrap_or(f64::NAN);
            let z = (p.mean - o) / p.std_error;
            partial.table.push(vec![
                rec.m.into(),
                rec.eta.into(),
                rec.delta.into(),
                rec.regime.tag.as_str().into(),
                p.k.into(),
                p.mean.into(),
                p.std_error.into(),
                o.into(),
                z.into(),
            ]);
            if oracle.is_some() {
                partial.checks.push(Check::new(
                    format!("exp moment oracle m={} k={}", rec.m, p.k),
                    z.abs() <= zmax,
                    format!("mean {:.6} +- {:.6}, oracle {o:.6}", p.mean, p.std_error),
                ));
            }
        }
        partial.checks.push(Check::new(
            format!("exp moment flat m={}", rec.m),
            curve.flat(zmax),
            format!("slope {:.3e} +- {:.3e}, overflow {}", curve.slope, curve.slope_se, curve.overflow),
        ));
        curves.push(json!({"m": rec.m, "eta": rec.eta, "oracle": oracle, "curve": curve}));
        Ok(())
    })?;
    partial.summary = json!({ "curves": curves });
    Ok(partial)
}
