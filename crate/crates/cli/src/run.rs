//! Subcommand dispatch and result tables.

use std::fmt;

use fokker_core::checks::validation_suite;
use fokker_core::modified::{estimate_modified_kernel, ClockBoundary, ModifiedEndpoints};
use fokker_core::propagator::{estimate_kernel, free_kernel_analytic, free_proper_time_integral, proper_time_integral};
use fokker_core::quadrature::integrate_gl;
use fokker_core::FokkerError;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Sweep};

/// Relative tolerance of the proper-time comparisons in `free-oracle`.
pub const ORACLE_TOLERANCE: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Validate,
    FreeOracle,
    Propagate,
    Modified,
    Sweep,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::FreeOracle => "free-oracle",
            Subcommand::Propagate => "propagate",
            Subcommand::Modified => "modified",
            Subcommand::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] FokkerError),
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(FokkerError::NonConvergence { .. }) => 4,
            RunError::Numerical(_) | RunError::Io(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Numerical(FokkerError::NonConvergence { .. }) => "non-convergence",
            RunError::Numerical(_) => "numerical",
            RunError::Io(_) => "io",
        }
    }

    /// Machine-readable failure record.
    pub fn record(&self) -> Value {
        json!({
            "status": "failed",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Bool(bool),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(x) => write!(f, "{x:e}"),
            Cell::Int(n) => write!(f, "{n}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Result of one invocation: a table plus whatever else belongs in the JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub subcommand: Subcommand,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub extra: Value,
    pub passed: bool,
}

impl Report {
    fn new(subcommand: Subcommand, columns: Vec<&'static str>) -> Self {
        Self {
            subcommand,
            columns,
            rows: Vec::new(),
            extra: Value::Null,
            passed: true,
        }
    }

    pub fn to_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| RunError::Io(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string())).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| RunError::Io(e.to_string()))
    }

    pub fn to_json(&self, config: &RunConfig) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let map: serde_json::Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(k, v)| (k.to_string(), serde_json::to_value(v).unwrap_or(Value::Null)))
                    .collect();
                Value::Object(map)
            })
            .collect();
        json!({
            "status": if self.passed { "passed" } else { "failed" },
            "tool": "fokker",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand.name(),
            "seed": config.estimator.seed,
            "workers": config.estimator.workers,
            "grid": {
                "n_steps1": config.estimator.n_steps1,
                "n_steps2": config.estimator.n_steps2,
                "s1": config.s1,
                "s2": config.s2,
            },
            "config": config,
            "config_text": config.source,
            "columns": self.columns,
            "rows": rows,
            "extra": self.extra,
        })
    }
}

/// Runs one subcommand. `sweep` takes its list from `sweep_override` or the config.
pub fn run(subcommand: Subcommand, config: &RunConfig, sweep_override: Option<&Sweep>) -> Result<Report, RunError> {
    match subcommand {
        Subcommand::Validate => validate(config),
        Subcommand::FreeOracle => free_oracle(config),
        Subcommand::Propagate => propagate(config),
        Subcommand::Modified => modified(config),
        Subcommand::Sweep => {
            let sweep = sweep_override
                .or(config.sweep.as_ref())
                .ok_or(ConfigError::MissingKey("sweep_key"))?;
            sweep_run(config, sweep)
        }
    }
}

fn validate(config: &RunConfig) -> Result<Report, RunError> {
    let mut report = Report::new(Subcommand::Validate, vec!["check", "residual", "tolerance", "trials", "passed"]);
    for check in validation_suite(&config.params, config.estimator.seed)? {
        report.passed &= check.passed;
        report.rows.push(vec![
            Cell::Text(check.name),
            Cell::Num(check.residual),
            Cell::Num(check.tolerance),
            Cell::Int(check.trials),
            Cell::Bool(check.passed),
        ]);
    }
    Ok(report)
}

/// `∫₀^∞ K(S) dS` of the 4-D free kernel by Gauss–Legendre in `ln S`.
pub fn free_proper_time_quadrature(r: f64, m: f64, hbar: f64) -> f64 {
    let x = [r, 0.0, 0.0, 0.0];
    let f = |u: f64| {
        let s = u.exp();
        s * free_kernel_analytic(&[0.0; 4], &x, s, m, hbar).unwrap_or(0.0)
    };
    integrate_gl(f, -40.0, 12.0, 400, 16)
}

fn free_oracle(config: &RunConfig) -> Result<Report, RunError> {
    let p = config.params;
    let mut report = Report::new(
        Subcommand::FreeOracle,
        vec![
            "r",
            "kernel_s1",
            "bessel",
            "quadrature",
            "bessel_error",
            "pt_integral",
            "pt_expected",
            "pt_error",
            "passed",
        ],
    );
    let grid = config.proper_time_grid()?;
    let free = p.with_coupling(0.0).with_mode(fokker_core::action::Mode::Euclidean);
    for &r in &config.oracle_distances {
        if r.is_nan() || r <= 0.0 {
            return Err(ConfigError::Invalid {
                key: "oracle_distances".into(),
                reason: format!("separations must be positive, got {r}"),
            }
            .into());
        }
        let x = [r, 0.0, 0.0, 0.0];
        let kernel_s1 = free_kernel_analytic(&[0.0; 4], &x, config.s1, p.m1, p.hbar)?;
        let bessel = free_proper_time_integral(r, p.m1, p.hbar, 4)?;
        let quadrature = free_proper_time_quadrature(r, p.m1, p.hbar);
        let bessel_error = (bessel - quadrature).abs() / quadrature;
        let ep = fokker_core::grid::Endpoints::new([0.0; 4], x)?;
        let pt = proper_time_integral(&ep, &ep, &free, &grid, &config.estimator)?;
        let expected = quadrature * free_proper_time_quadrature(r, p.m2, p.hbar);
        let pt_error = (pt.value - expected).abs() / expected;
        let passed = bessel_error < ORACLE_TOLERANCE && pt_error < ORACLE_TOLERANCE;
        report.passed &= passed;
        report.rows.push(vec![
            Cell::Num(r),
            Cell::Num(kernel_s1),
            Cell::Num(bessel),
            Cell::Num(quadrature),
            Cell::Num(bessel_error),
            Cell::Num(pt.value),
            Cell::Num(expected),
            Cell::Num(pt_error),
            Cell::Bool(passed),
        ]);
    }
    Ok(report)
}

const PROPAGATE_COLUMNS: [&str; 8] = [
    "S1",
    "S2",
    "ratio_mean",
    "ratio_stderr",
    "free_reference",
    "value",
    "n_samples",
    "skipped",
];

fn propagate_row(config: &RunConfig) -> Result<(Vec<Cell>, Value), RunError> {
    let [ep1, ep2] = &config.endpoints;
    let est = estimate_kernel(ep1, ep2, config.s1, config.s2, &config.params, &config.estimator)?;
    let row = vec![
        Cell::Num(config.s1),
        Cell::Num(config.s2),
        Cell::Num(est.ratio_mean),
        Cell::Num(est.ratio_stderr),
        Cell::Num(est.free_reference),
        Cell::Num(est.value),
        Cell::Int(est.n_samples),
        Cell::Int(est.skipped),
    ];
    let extra = if config.proper_time {
        let pt = proper_time_integral(ep1, ep2, &config.params, &config.proper_time_grid()?, &config.estimator)?;
        json!({
            "proper_time": {
                "value": pt.value,
                "error": pt.error,
                "quadrature_error": pt.quadrature_error,
                "statistical_error": pt.statistical_error,
                "tail": pt.tail,
            }
        })
    } else {
        Value::Null
    };
    Ok((row, extra))
}

fn propagate(config: &RunConfig) -> Result<Report, RunError> {
    let mut report = Report::new(Subcommand::Propagate, PROPAGATE_COLUMNS.to_vec());
    let (row, extra) = propagate_row(config)?;
    report.rows.push(row);
    report.extra = extra;
    Ok(report)
}

fn modified(config: &RunConfig) -> Result<Report, RunError> {
    let ep = |k: usize| {
        let e = &config.endpoints[k];
        let (x_in, x_out) = e.spatial();
        ModifiedEndpoints {
            x_in,
            x_out,
            clock: ClockBoundary {
                x0_in: e.x_in[0],
                p_in: config.p_in[k],
            },
            x0_out: e.x_out[0],
        }
    };
    let est = estimate_modified_kernel([ep(0), ep(1)], &config.params, &config.estimator, config.s_max)?;
    let mut report = Report::new(
        Subcommand::Modified,
        vec![
            "free_S1",
            "free_S2",
            "mean_S1",
            "mean_S2",
            "mean_P1_out",
            "mean_P2_out",
            "ratio_mean",
            "ratio_stderr",
            "free_reference",
            "value",
            "n_samples",
            "skipped",
        ],
    );
    let e = est.estimate;
    report.rows.push(vec![
        Cell::Num(est.free_s1),
        Cell::Num(est.free_s2),
        Cell::Num(est.mean_s1),
        Cell::Num(est.mean_s2),
        Cell::Num(est.mean_p1_out),
        Cell::Num(est.mean_p2_out),
        Cell::Num(e.ratio_mean),
        Cell::Num(e.ratio_stderr),
        Cell::Num(e.free_reference),
        Cell::Num(e.value),
        Cell::Int(e.n_samples),
        Cell::Int(e.skipped),
    ]);
    Ok(report)
}

fn sweep_run(config: &RunConfig, sweep: &Sweep) -> Result<Report, RunError> {
    crate::config::validate_sweep_key(&sweep.key)?;
    let mut columns = vec!["parameter", "parameter_value"];
    columns.extend(PROPAGATE_COLUMNS);
    let mut report = Report::new(Subcommand::Sweep, columns);
    let mut extras = Vec::new();
    for &value in &sweep.values {
        let point = config.with_value(&sweep.key, value)?;
        let (row, extra) = propagate_row(&point)?;
        let mut full = vec![Cell::Text(sweep.key.clone()), Cell::Num(value)];
        full.extend(row);
        report.rows.push(full);
        extras.push(extra);
    }
    if extras.iter().any(|e| !e.is_null()) {
        report.extra = Value::Array(extras);
    }
    Ok(report)
}
