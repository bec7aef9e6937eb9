//! Experiment orchestration: configuration, deterministic parallel
//! replication, and CSV/JSON artifacts.

mod config;
mod output;
mod regime;
mod run;

pub use config::{coupled_eta, EtaRule, Experiment, ExperimentConfig, SteinSettings, Tolerances, ValidationSettings};
pub use output::{emit_csv, emit_json, parse_csv, Cell, Table, TABLE_VERSION};
pub use regime::{theorem_regime, Regime, RegimeTag};
pub use run::{berry_esseen_scale, run_experiment, Check, PointRecord, RunManifest, RunOutcome, VERSION_TAG};
