//! Flat TOML run configuration.
//!
//! Every key is a top-level scalar or a short numeric array. Lengths and
//! proper times are in natural units (`c = 1`), `delta_width` in length².

use std::str::FromStr;

use fokker_core::action::{ModelParams, Mode};
use fokker_core::grid::Endpoints;
use fokker_core::propagator::{EstimatorConfig, ProperTimeGrid};
use fokker_core::{FokkerError, Vec4};
use serde::Serialize;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}`: expected {expected}")]
    TypeMismatch { key: String, expected: &'static str },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

/// Keys with their meaning; the order here is the documented schema order.
pub const KEYS: &[(&str, &str)] = &[
    ("mode", "\"euclidean\" or \"minkowski\" (required)"),
    ("m1", "mass of particle 1 (required)"),
    ("m2", "mass of particle 2 (required)"),
    ("coupling", "charge product e1*e2 (required)"),
    ("hbar", "Planck constant, default 1"),
    ("delta_width", "light-cone regulator width in length^2 (required)"),
    ("x1_in", "4-vector, particle 1 start (required)"),
    ("x1_out", "4-vector, particle 1 end (required)"),
    ("x2_in", "4-vector, particle 2 start (required)"),
    ("x2_out", "4-vector, particle 2 end (required)"),
    ("s1", "proper time of particle 1 for fixed-S runs, default 1"),
    ("s2", "proper time of particle 2 for fixed-S runs, default 1"),
    ("n_steps1", "lattice slots on worldline 1, default 8"),
    ("n_steps2", "lattice slots on worldline 2, default 8"),
    ("n_samples", "Monte Carlo samples, default 10000"),
    ("seed", "sampler seed, default 1"),
    ("workers", "worker threads, default 1"),
    ("proper_time", "also integrate over both proper times, default false"),
    ("pt_min", "smallest proper time on the quadrature grid, default 0.01"),
    ("pt_max", "largest proper time on the quadrature grid, default 10"),
    ("pt_points", "grid points per proper-time axis, default 25"),
    ("p1_in", "initial self-energy of particle 1 (modified runs), default 0.5"),
    ("p2_in", "initial self-energy of particle 2 (modified runs), default 0.5"),
    ("s_max", "upper end of the shooting bracket, default 20"),
    ("oracle_distances", "separations for free-oracle, default [0.5, 1, 2]"),
    ("sweep_key", "parameter varied by sweep"),
    ("sweep_values", "values taken by sweep_key"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub endpoints: [Endpoints; 2],
    pub s1: f64,
    pub s2: f64,
    pub estimator: EstimatorConfig,
    pub proper_time: bool,
    pub pt_min: f64,
    pub pt_max: f64,
    pub pt_points: usize,
    pub p_in: [f64; 2],
    pub s_max: f64,
    pub oracle_distances: Vec<f64>,
    pub sweep: Option<Sweep>,
    /// Verbatim configuration text, kept for provenance.
    #[serde(skip)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

impl RunConfig {
    pub fn proper_time_grid(&self) -> Result<ProperTimeGrid, ConfigError> {
        ProperTimeGrid::new(self.pt_min, self.pt_max, self.pt_points, self.pt_points).map_err(core_error)
    }

    /// Same configuration with one numeric key replaced.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Self, ConfigError> {
        let mut table = parse_table(&self.source)?;
        let as_int = value.fract() == 0.0 && value.abs() < 1e15;
        let v = match table.get(key) {
            Some(Value::Integer(_)) if as_int => Value::Integer(value as i64),
            _ if is_integer_key(key) && as_int => Value::Integer(value as i64),
            _ => Value::Float(value),
        };
        table.insert(key.to_string(), v);
        let text = toml::to_string(&table).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        parse_config(&text)
    }
}

fn is_integer_key(key: &str) -> bool {
    matches!(key, "n_steps1" | "n_steps2" | "n_samples" | "seed" | "workers" | "pt_points")
}

fn parse_table(text: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Syntax(e.message().to_string()))
}

pub(crate) fn core_error(err: FokkerError) -> ConfigError {
    match err {
        FokkerError::InvalidParameter { field, reason } => ConfigError::Invalid {
            key: field.to_string(),
            reason,
        },
        other => ConfigError::Invalid {
            key: "config".into(),
            reason: other.to_string(),
        },
    }
}

struct Reader<'a> {
    table: &'a Table,
}

impl Reader<'_> {
    fn float(&self, key: &'static str) -> Result<Option<f64>, ConfigError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(mismatch(key, "a number")),
        }
    }

    fn required_float(&self, key: &'static str) -> Result<f64, ConfigError> {
        self.float(key)?.ok_or(ConfigError::MissingKey(key))
    }

    fn count(&self, key: &'static str, default: usize) -> Result<usize, ConfigError> {
        match self.table.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(Value::Integer(_)) => Err(ConfigError::Invalid {
                key: key.into(),
                reason: "must be non-negative".into(),
            }),
            Some(_) => Err(mismatch(key, "an integer")),
        }
    }

    fn flag(&self, key: &'static str) -> Result<bool, ConfigError> {
        match self.table.get(key) {
            None => Ok(false),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(mismatch(key, "true or false")),
        }
    }

    fn numbers(&self, key: &'static str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(value) = self.table.get(key) else {
            return Ok(None);
        };
        let Value::Array(items) = value else {
            return Err(mismatch(key, "an array of numbers"));
        };
        items
            .iter()
            .map(|v| match v {
                Value::Float(x) => Ok(*x),
                Value::Integer(i) => Ok(*i as f64),
                _ => Err(mismatch(key, "an array of numbers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn four_vector(&self, key: &'static str) -> Result<Vec4, ConfigError> {
        let v = self.numbers(key)?.ok_or(ConfigError::MissingKey(key))?;
        v.try_into().map_err(|_| mismatch(key, "an array of 4 numbers"))
    }
}

fn mismatch(key: &str, expected: &'static str) -> ConfigError {
    ConfigError::TypeMismatch {
        key: key.into(),
        expected,
    }
}

fn positive(key: &'static str, value: f64) -> Result<f64, ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ConfigError::Invalid {
            key: key.into(),
            reason: format!("must be positive, got {value}"),
        })
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table = parse_table(text)?;
    if let Some(unknown) = table.keys().find(|k| !KEYS.iter().any(|(known, _)| known == k)) {
        return Err(ConfigError::UnknownKey(unknown.clone()));
    }
    let r = Reader { table: &table };

    let mode = match table.get("mode") {
        None => return Err(ConfigError::MissingKey("mode")),
        Some(Value::String(s)) => Mode::from_str(s).map_err(|reason| ConfigError::Invalid {
            key: "mode".into(),
            reason,
        })?,
        Some(_) => return Err(mismatch("mode", "a string")),
    };
    let params = ModelParams::new(
        r.required_float("m1")?,
        r.required_float("m2")?,
        r.required_float("coupling")?,
        r.float("hbar")?.unwrap_or(1.0),
        r.required_float("delta_width")?,
        mode,
    )
    .map_err(core_error)?;

    let endpoint = |a: &'static str, b: &'static str| -> Result<Endpoints, ConfigError> {
        Endpoints::new(r.four_vector(a)?, r.four_vector(b)?).map_err(|e| ConfigError::Invalid {
            key: a.into(),
            reason: e.to_string(),
        })
    };
    let endpoints = [endpoint("x1_in", "x1_out")?, endpoint("x2_in", "x2_out")?];

    let estimator = EstimatorConfig {
        n_steps1: r.count("n_steps1", 8)?,
        n_steps2: r.count("n_steps2", 8)?,
        n_samples: r.count("n_samples", 10_000)?,
        seed: r.count("seed", 1)? as u64,
        workers: r.count("workers", 1)?,
    };
    for (key, value) in [
        ("n_steps1", estimator.n_steps1),
        ("n_steps2", estimator.n_steps2),
        ("n_samples", estimator.n_samples),
        ("workers", estimator.workers),
    ] {
        if value == 0 {
            return Err(ConfigError::Invalid {
                key: key.into(),
                reason: "must be at least 1".into(),
            });
        }
    }

    let sweep = match (table.get("sweep_key"), r.numbers("sweep_values")?) {
        (None, None) => None,
        (Some(Value::String(key)), Some(values)) => Some(Sweep {
            key: key.clone(),
            values,
        }),
        (Some(Value::String(_)), None) => return Err(ConfigError::MissingKey("sweep_values")),
        (Some(_), _) => return Err(mismatch("sweep_key", "a string")),
        (None, Some(_)) => return Err(ConfigError::MissingKey("sweep_key")),
    };

    let config = RunConfig {
        params,
        endpoints,
        s1: positive("s1", r.float("s1")?.unwrap_or(1.0))?,
        s2: positive("s2", r.float("s2")?.unwrap_or(1.0))?,
        estimator,
        proper_time: r.flag("proper_time")?,
        pt_min: positive("pt_min", r.float("pt_min")?.unwrap_or(0.01))?,
        pt_max: positive("pt_max", r.float("pt_max")?.unwrap_or(10.0))?,
        pt_points: r.count("pt_points", 25)?,
        p_in: [
            positive("p1_in", r.float("p1_in")?.unwrap_or(0.5))?,
            positive("p2_in", r.float("p2_in")?.unwrap_or(0.5))?,
        ],
        s_max: positive("s_max", r.float("s_max")?.unwrap_or(20.0))?,
        oracle_distances: r.numbers("oracle_distances")?.unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
        sweep,
        source: text.to_string(),
    };
    if config.pt_max <= config.pt_min {
        return Err(ConfigError::Invalid {
            key: "pt_max".into(),
            reason: "must exceed pt_min".into(),
        });
    }
    if config.pt_points < 3 {
        return Err(ConfigError::Invalid {
            key: "pt_points".into(),
            reason: "at least 3 points".into(),
        });
    }
    if let Some(sweep) = &config.sweep {
        validate_sweep_key(&sweep.key)?;
    }
    Ok(config)
}

pub(crate) fn validate_sweep_key(key: &str) -> Result<(), ConfigError> {
    let numeric = [
        "m1", "m2", "coupling", "hbar", "delta_width", "s1", "s2", "n_steps1", "n_steps2", "n_samples", "seed",
        "pt_min", "pt_max", "pt_points", "p1_in", "p2_in", "s_max",
    ];
    if numeric.contains(&key) {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key: "sweep_key".into(),
            reason: format!("`{key}` is not a numeric scalar key"),
        })
    }
}

/// Parses `key=[v1, v2, ...]` from the command line.
pub fn parse_sweep_arg(arg: &str) -> Result<Sweep, ConfigError> {
    let bad = || ConfigError::Invalid {
        key: "sweep".into(),
        reason: format!("expected key=[v1, v2, ...], got `{arg}`"),
    };
    let (key, list) = arg.split_once('=').ok_or_else(bad)?;
    let key = key.trim();
    validate_sweep_key(key)?;
    let inner = list.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')).ok_or_else(bad)?;
    let values = inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(bad());
    }
    Ok(Sweep {
        key: key.to_string(),
        values,
    })
}
