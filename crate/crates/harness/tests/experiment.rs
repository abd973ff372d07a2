use std::path::Path;

use hcope_harness::experiment::{CSV_HEADER, CSV_NAME};
use hcope_harness::*;

fn shipped(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::from_path(&path).unwrap()
}

fn deterministic_config(out: &Path, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"environment": {{"kind": "bandit", "arm_reward_probs": [1.0, 1.0], "target_optimal_prob": 0.5, "behavior_optimal_prob": 0.5}},
            "dataset_sizes": [20], "confidence_levels": [0.9], "n_trials": 1, "methods": {},
            "master_seed": 9, "output_dir": {:?}}}"#,
        serde_json::to_string(&methods).unwrap(),
        out.to_str().unwrap()
    ))
    .unwrap()
}

#[test]
fn single_trial_on_a_deterministic_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = deterministic_config(dir.path(), Method::ALL.to_vec());
    let rows = run_coverage_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r.coverage, 1.0, "{r:?}");
        assert_eq!(r.failures, 0);
        if r.method == Method::Bernstein {
            // Zero variance leaves only the range term 2·3M·ln(6/α)/n.
            let expected = (6.0 * (6.0f64 / 0.1).ln() / 20.0).ln();
            assert!((r.median_log_width - expected).abs() < 1e-6, "{r:?}");
        } else {
            assert_eq!(r.median_log_width, f64::NEG_INFINITY, "{r:?}");
        }
    }
    let csv = std::fs::read_to_string(dir.path().join(CSV_NAME)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3], "1");
        if fields[0] != "bernstein" {
            assert_eq!(fields[4], "-inf");
        }
        assert_eq!(fields[6], "nan");
    }
}

#[test]
fn shipped_bandit_config_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("bandit.json");
    let expected = cfg.methods.len() * cfg.dataset_sizes.len() * cfg.confidence_levels.len();
    cfg.n_trials = 3;
    cfg.output_dir = dir.path().to_path_buf();
    let rows = run_coverage_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), expected);
    let csv = std::fs::read_to_string(dir.path().join(CSV_NAME)).unwrap();
    assert_eq!(csv.lines().count(), expected + 1);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.coverage));
    }
}

#[test]
fn shipped_gridworld_config_parses() {
    let cfg = shipped("gridworld.json");
    assert_eq!(cfg.dataset_sizes, vec![50]);
    assert_eq!(cfg.horizon, 100);
    assert_eq!(cfg.n_trials, 100);
}

#[test]
fn csv_is_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = shipped("bandit.json");
    cfg.n_trials = 8;
    cfg.dataset_sizes = vec![40];
    cfg.output_dir = a.path().to_path_buf();
    run_coverage_experiment_with_threads(&cfg, Some(1)).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    run_coverage_experiment_with_threads(&cfg, Some(3)).unwrap();
    let x = std::fs::read(a.path().join(CSV_NAME)).unwrap();
    let y = std::fs::read(b.path().join(CSV_NAME)).unwrap();
    assert_eq!(x, y);
}

#[test]
fn unknown_fields_and_bad_levels_are_rejected() {
    let base = r#""environment": {"kind": "bandit", "arm_reward_probs": [0.8, 0.2], "target_optimal_prob": 0.95, "behavior_optimal_prob": 0.55},
        "dataset_sizes": [10], "methods": ["t_test"], "master_seed": 1, "output_dir": "x""#;
    let err = ExperimentConfig::from_json(&format!("{{{base}, \"confidence_levels\": [0.9], \"n_trails\": 5}}")).unwrap_err();
    assert!(err.to_string().contains("n_trails"), "{err}");
    let err = ExperimentConfig::from_json(&format!("{{{base}, \"confidence_levels\": [1.0]}}")).unwrap_err();
    assert!(err.to_string().contains("confidence_levels"), "{err}");
    let err = ExperimentConfig::from_json(&format!("{{{base}, \"confidence_levels\": [0.9], \"methods\": [\"magic\"]}}"));
    assert!(err.is_err());
    let ok = ExperimentConfig::from_json(&format!("{{{base}, \"confidence_levels\": [0.9]}}")).unwrap();
    assert_eq!(ok.n_trials, 200);
    assert_eq!(ok.horizon, 1);
}

#[test]
fn failed_trials_are_counted_not_covered() {
    // One trajectory is too few for a t interval.
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"environment": {{"kind": "bandit", "arm_reward_probs": [0.8, 0.2], "target_optimal_prob": 0.95, "behavior_optimal_prob": 0.55}},
            "dataset_sizes": [1], "confidence_levels": [0.9], "n_trials": 4, "methods": ["t_test"],
            "master_seed": 2, "output_dir": {:?}}}"#,
        dir.path().to_str().unwrap()
    ))
    .unwrap();
    let rows = run_coverage_experiment(&cfg).unwrap();
    assert_eq!(rows[0].failures, 4);
    assert!(rows[0].coverage.is_nan());
    let csv = std::fs::read_to_string(dir.path().join(CSV_NAME)).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("t_test,1,0.9,nan,nan,4,"));
}

fn plot_rows(methods: &[Method], levels: &[f64]) -> Vec<CoverageRow> {
    let mut rows = Vec::new();
    for &m in methods {
        for &level in levels {
            rows.push(CoverageRow {
                method: m,
                n: 100,
                level,
                coverage: level - 0.02,
                median_log_width: -1.5,
                failures: 0,
                mean_runtime_s: f64::NAN,
            });
        }
    }
    rows
}

#[test]
fn plots_have_one_series_per_method_and_a_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let rows = plot_rows(&[Method::CoindiceKl, Method::Bernstein], &[0.8, 0.9, 0.95]);
    let files = emit_plots(&rows, "bandit", dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    for f in &files {
        let svg = std::fs::read_to_string(f).unwrap();
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert_eq!(svg.matches(r#"class="marker""#).count(), 6);
        let is_coverage = f.file_name().unwrap().to_str().unwrap().contains("coverage");
        assert_eq!(svg.contains(r#"class="reference""#), is_coverage);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn single_point_series_is_rendered() {
    let dir = tempfile::tempdir().unwrap();
    let rows = plot_rows(&[Method::TTest], &[0.9]);
    for f in emit_plots(&rows, "gridworld", dir.path()).unwrap() {
        let svg = std::fs::read_to_string(f).unwrap();
        assert_eq!(svg.matches(r#"class="series""#).count(), 1);
        assert_eq!(svg.matches(r#"class="marker""#).count(), 1);
    }
    assert!(emit_plots(&[], "bandit", dir.path()).is_err());
}
