use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use sgld_core::harness::{run_experiment, Experiment, ExperimentConfig};

/// Runs one SGLD experiment and writes `manifest.json` plus `<experiment>.csv`.
///
/// Exit status: 0 when every check passes, 2 when a check fails, 1 on error.
#[derive(Parser, Debug)]
#[command(name = "sgld-cmd", version)]
struct Cli {
    /// tail-ratio, berry-esseen, w1-scan, audit-decomposition, audit-assumptions, stein-check or exp-moment
    experiment: String,
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "SGLD_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "SGLD_WORKERS")]
    workers: Option<usize>,
    /// Output directory (defaults to the config's `out`, then `out/<experiment>`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the first replication's trajectory and noise for each point
    #[arg(long)]
    audit: bool,
}

fn run(cli: Cli) -> Result<bool> {
    let experiment = Experiment::parse(&cli.experiment)?;
    let mut cfg = ExperimentConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    if cfg.experiment != experiment {
        bail!(
            "config {} describes '{}' but '{}' was requested",
            cli.config.display(),
            cfg.experiment.name(),
            experiment.name()
        );
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    }
    cfg.audit |= cli.audit;
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out").join(experiment.name()));

    let outcome = run_experiment(&cfg)?;
    outcome.write(&out)?;
    let m = &outcome.manifest;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    for c in &m.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if !m.nan_columns.is_empty() {
        println!("nan columns: {}", m.nan_columns.join(", "));
    }
    println!(
        "{} {} (config {}, {:.1} s) -> {}",
        if m.pass { "PASS" } else { "FAIL" },
        experiment.name(),
        m.config_hash,
        m.elapsed_ms / 1e3,
        out.display()
    );
    Ok(m.pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
