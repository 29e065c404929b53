use std::path::{Path, PathBuf};
use std::process::Command;

use fokker_cli::{json_path, parse_config, run, Cell, ConfigError, Subcommand};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn benchmark_text() -> String {
    std::fs::read_to_string(golden("free.toml")).unwrap()
}

fn fokker(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fokker")).args(args).output().unwrap()
}

fn with_coupling(coupling: f64) -> String {
    benchmark_text().replace("coupling = 0.0", &format!("coupling = {coupling}"))
}

#[test]
fn misspelled_key_is_named() {
    let text = benchmark_text().replace("coupling =", "copling =");
    assert_eq!(parse_config(&text).unwrap_err(), ConfigError::UnknownKey("copling".into()));
}

#[test]
fn negative_width_is_rejected() {
    let text = benchmark_text().replace("delta_width = 0.5", "delta_width = -0.1");
    match parse_config(&text).unwrap_err() {
        ConfigError::Invalid { key, .. } => assert_eq!(key, "delta_width"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_and_mistyped_keys() {
    let text = benchmark_text().replace("m2 = 1.0\n", "");
    assert_eq!(parse_config(&text).unwrap_err(), ConfigError::MissingKey("m2"));
    let text = benchmark_text().replace("m2 = 1.0", "m2 = \"heavy\"");
    assert!(matches!(parse_config(&text).unwrap_err(), ConfigError::TypeMismatch { key, .. } if key == "m2"));
    let text = benchmark_text().replace("x1_in = [0.0, 0.0, 0.0, 0.0]", "x1_in = [0.0, 0.0]");
    assert!(matches!(parse_config(&text).unwrap_err(), ConfigError::TypeMismatch { key, .. } if key == "x1_in"));
    let text = benchmark_text().replace("mode = \"euclidean\"", "mode = \"lorentzian\"");
    assert!(matches!(parse_config(&text).unwrap_err(), ConfigError::Invalid { key, .. } if key == "mode"));
}

#[test]
fn free_benchmark_matches_golden_file() {
    let config = parse_config(&benchmark_text()).unwrap();
    let report = run(Subcommand::Propagate, &config, None).unwrap();
    let expected = std::fs::read_to_string(golden("free_propagate.csv")).unwrap();
    assert_eq!(report.to_csv().unwrap(), expected);
}

#[test]
fn free_propagate_is_the_free_product() {
    let config = parse_config(&benchmark_text()).unwrap();
    let report = run(Subcommand::Propagate, &config, None).unwrap();
    // (2π)^{-2} exp(-(1/2 + 1/2)) per particle for a unit time step at S = 1, m = 1
    let single = (-1.0f64).exp() / (4.0 * std::f64::consts::PI.powi(2));
    let row = &report.rows[0];
    assert_eq!(row[5], row[4]);
    match row[5] {
        Cell::Num(v) => assert!((v / (single * single) - 1.0).abs() < 1e-14),
        ref other => panic!("{other:?}"),
    }
}

#[test]
fn sweep_ratio_moves_away_from_one() {
    let config = parse_config(&benchmark_text()).unwrap();
    let sweep = fokker_cli::parse_sweep_arg("coupling=[0, 0.01, 0.02]").unwrap();
    let report = run(Subcommand::Sweep, &config, Some(&sweep)).unwrap();
    assert_eq!(report.rows.len(), 3);
    let ratios: Vec<f64> = report
        .rows
        .iter()
        .map(|r| match r[4] {
            Cell::Num(x) => x,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(ratios[0], 1.0);
    let dev: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    assert!(dev[0] < dev[1] && dev[1] < dev[2], "{ratios:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, with_coupling(0.05)).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}.csv"));
        let status = fokker(&[
            "propagate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--workers",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(status.status.success(), "{status:?}");
        outputs.push(std::fs::read(&out).unwrap());
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_path(&out)).unwrap()).unwrap();
        assert_eq!(meta["seed"], 11);
        assert_eq!(meta["workers"], 3);
        assert_eq!(meta["subcommand"], "propagate");
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn validate_exits_cleanly() {
    let out = fokker(&["validate", "--config", golden("free.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["determinant identity", "legendre duality", "phase-space reduction", "force duality", "free limit"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, benchmark_text().replace("coupling =", "copling =")).unwrap();
    let out = fokker(&["propagate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["kind"], "config");
    assert!(record["message"].as_str().unwrap().contains("copling"));

    // Minkowski weights are never sampled
    std::fs::write(&cfg, with_coupling(0.1).replace("\"euclidean\"", "\"minkowski\"")).unwrap();
    let out = fokker(&["propagate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    // an unreachable clock target cannot be bracketed
    let text = benchmark_text().replace("coupling = 0.0", "coupling = 0.01") + "s_max = 0.5\nn_samples = 5\n";
    let text = text.replace("n_samples = 4000\n", "");
    std::fs::write(&cfg, text).unwrap();
    let out = fokker(&["modified", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn solver_non_convergence_maps_to_exit_four() {
    let err = fokker_cli::RunError::Numerical(fokker_core::FokkerError::NonConvergence {
        iterations: 200,
        residual: 1e-3,
    });
    assert_eq!(err.exit_code(), 4);
    assert_eq!(err.record()["kind"], "non-convergence");
}
