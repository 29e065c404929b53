//! Batch driver for the `fokker-core` engine: configuration parsing,
//! subcommand dispatch and CSV/JSON output.

pub mod config;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{parse_config, parse_sweep_arg, ConfigError, RunConfig, Sweep};
pub use run::{run, Cell, Report, RunError, Subcommand};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub sweep: Option<String>,
}

/// JSON companion of a CSV output path.
pub fn json_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn load(config_path: &Path, overrides: &Overrides) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| ConfigError::Syntax(format!("cannot read {}: {e}", config_path.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = overrides.seed {
        config.estimator.seed = seed;
    }
    if let Some(workers) = overrides.workers {
        if workers == 0 {
            return Err(ConfigError::Invalid {
                key: "workers".into(),
                reason: "must be at least 1".into(),
            }
            .into());
        }
        config.estimator.workers = workers;
    }
    Ok(config)
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Runs a subcommand end to end and returns the process exit status.
/// Without `--out` the CSV goes to stdout; failures are reported on stderr
/// as a JSON record (and into the JSON output file when one is requested).
pub fn execute(subcommand: Subcommand, config_path: &Path, overrides: &Overrides) -> i32 {
    match execute_inner(subcommand, config_path, overrides) {
        Ok(report) if report.passed => 0,
        Ok(report) => {
            let failed: Vec<String> = report
                .rows
                .iter()
                .filter(|row| matches!(row.last(), Some(Cell::Bool(false))))
                .map(|row| row[0].to_string())
                .collect();
            let record = serde_json::json!({
                "status": "failed",
                "kind": "tolerance",
                "exit_code": 3,
                "failed": failed,
            });
            eprintln!("{record}");
            3
        }
        Err(err) => {
            let record = err.record();
            eprintln!("{record}");
            if let Some(out) = &overrides.out {
                let _ = write(&json_path(out), &format!("{record:#}\n"));
            }
            err.exit_code()
        }
    }
}

fn execute_inner(subcommand: Subcommand, config_path: &Path, overrides: &Overrides) -> Result<Report, RunError> {
    let config = load(config_path, overrides)?;
    let sweep = overrides.sweep.as_deref().map(parse_sweep_arg).transpose()?;
    let report = run(subcommand, &config, sweep.as_ref())?;
    let csv = report.to_csv()?;
    match &overrides.out {
        Some(out) => {
            write(out, &csv)?;
            write(&json_path(out), &format!("{:#}\n", report.to_json(&config)))?;
        }
        None => print!("{csv}"),
    }
    Ok(report)
}
