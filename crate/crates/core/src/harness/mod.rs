//! Experiment harness behind the `bqpg` binary.
//!
//! Three modes: `train` writes `run.csv`, `gradquality` writes
//! `gradquality.csv`, and `selftest` prints one line per check. CSV outputs
//! get a JSON sidecar (`*.json`) holding the resolved configuration and the
//! CSV schema version.

mod config;
mod gradquality;
mod selftest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::json;

pub use config::{env_overrides, ExperimentConfig, GradQualityConfig, Mode, ENV_PREFIX};
pub use gradquality::{
    grad_quality_study, oracle_gradient, study_policy, study_q_values, summarize,
    GradQualityReport, GradQualityRow, GRADQUALITY_CSV_VERSION,
};
pub use selftest::{run_selftest, CheckResult};

use crate::algos::{train_with_output, RunRecord, RUN_CSV_VERSION};
use crate::checkpoint;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "bqpg", about = "Policy-gradient estimator experiments")]
pub struct Cli {
    /// Overrides `mode` from the config.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    if let Some(path) = &cli.config {
        if !path.is_file() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_sidecar(path: &Path, cfg: &ExperimentConfig, schema: &str, version: u32, extra: serde_json::Value) -> Result<()> {
    let doc = json!({
        "schema": schema,
        "csv_version": version,
        "config": cfg,
        "result": extra,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    write_file(path, &text)
}

fn run_train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let record = train_with_output(&cfg.train, Some(&cfg.out))?;
    write_file(&cfg.out.join("run.csv"), &record.to_csv())?;
    checkpoint::save_policy(&cfg.out.join("policy_final.bin"), &record.policy)?;
    write_sidecar(
        &cfg.out.join("run.json"),
        cfg,
        "run",
        RUN_CSV_VERSION,
        json!({ "complete": record.complete, "error": record.error, "iterations": record.rows.len() }),
    )?;
    Ok(record)
}

fn run_gradquality(cfg: &ExperimentConfig) -> Result<GradQualityReport> {
    let report = grad_quality_study(&cfg.train, &cfg.gradquality, cfg.seed)?;
    write_file(&cfg.out.join("gradquality.csv"), &report.to_csv())?;
    write_sidecar(
        &cfg.out.join("gradquality.json"),
        cfg,
        "gradquality",
        GRADQUALITY_CSV_VERSION,
        json!({
            "repeats": report.repeats,
            "oracle_norm": report.oracle_norm,
            "normvar_degenerate": report.degenerate_variance,
        }),
    )?;
    if report.degenerate_variance {
        println!("note: repeats = 1, so accuracy_stderr and normvar are 0 by definition");
    }
    Ok(report)
}

/// Executes one resolved experiment and returns the process exit code.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<i32> {
    match cfg.mode {
        Mode::Train => cfg.train.validate()?,
        Mode::Gradquality => {
            cfg.gradquality.validate()?;
            cfg.train.kernel.validate()?;
        }
        Mode::Selftest => {}
    }
    if cfg.mode != Mode::Selftest {
        std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    }
    match cfg.mode {
        Mode::Selftest => {
            let results = run_selftest(cfg.seed);
            for r in &results {
                println!("{} {} ({})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("selftest: {} passed, {failed} failed", results.len() - failed);
            Ok(0)
        }
        Mode::Train => {
            let record = run_train(cfg)?;
            println!(
                "train: {} iterations written to {}",
                record.rows.len(),
                cfg.out.join("run.csv").display()
            );
            match record.error {
                Some(e) => Err(Error::NumericalBreakdown(format!("run stopped early: {e}"))),
                None => Ok(0),
            }
        }
        Mode::Gradquality => {
            let report = run_gradquality(cfg)?;
            for r in &report.rows {
                println!(
                    "{:>6} n={:<6} accuracy {:.4} ± {:.4}  normvar {:.4e}",
                    r.estimator.as_str(),
                    r.n,
                    r.accuracy_mean,
                    r.accuracy_stderr,
                    r.normvar
                );
            }
            Ok(0)
        }
    }
}

/// Parses `args` (including the program name) and runs; errors are printed
/// to stderr and mapped to exit code 2 (usage) or 1 (everything else).
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = resolve_config(&cli).and_then(|cfg| run_experiment(&cfg));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
