//! Seeded coverage trials and their aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hcope_core::envs::{collect_dataset, Environment};
use hcope_core::mdp::{average_reward, exact_policy_value};
use hcope_core::rng::{derive_seed, label};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::methods::{evaluate, EvalContext, Method};

pub const CSV_NAME: &str = "coverage.csv";
pub const CSV_HEADER: [&str; 7] = ["method", "n", "level", "coverage", "median_log_width", "failures", "mean_runtime_s"];

/// Aggregate over the trials of one (method, n, level) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub method: Method,
    pub n: usize,
    pub level: f64,
    /// Fraction of successful trials whose interval holds the true value.
    /// NaN when every trial failed.
    pub coverage: f64,
    pub median_log_width: f64,
    pub failures: usize,
    /// NaN unless runtimes were recorded.
    pub mean_runtime_s: f64,
}

#[derive(Debug, Clone)]
struct TrialOutcome {
    /// `(covered, width)` or `None` on failure.
    result: Option<(bool, f64)>,
    runtime_s: f64,
}

/// Seed of one trial; distinct across methods, sizes, levels and indices.
pub fn trial_seed(master: u64, method: Method, n: usize, level: f64, trial: usize) -> u64 {
    derive_seed(master, &[label(method.name()), n as u64, level.to_bits(), trial as u64])
}

/// True value of the target policy, normalized.
pub fn true_value(env: &Environment) -> Result<f64> {
    let v = if env.mdp.gamma() < 1.0 {
        exact_policy_value(&env.mdp, &env.target)?
    } else {
        average_reward(&env.mdp, &env.target)?
    };
    Ok(v)
}

/// Worker count from `HCOPE_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    let raw = std::env::var("HCOPE_THREADS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring HCOPE_THREADS={raw:?}");
            None
        }
    }
}

/// Runs every configured cell, writes `coverage.csv` into the output
/// directory and returns the rows in (method, n, level) order.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    run_coverage_experiment_with_threads(config, threads_from_env())
}

pub fn run_coverage_experiment_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<CoverageRow>> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::config("HCOPE_THREADS", e.to_string()))?;
    let rows = pool.install(|| compute_rows(config))?;
    write_csv(&rows, &config.output_dir)?;
    Ok(rows)
}

fn compute_rows(config: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    let env = config.environment.build()?;
    for w in &env.warnings {
        log::warn!("{w}");
    }
    let truth = true_value(&env)?;
    let map = config.features.build(env.mdp.n_states(), env.mdp.n_actions())?;
    log::info!("{} environment, true value {truth}", config.environment.tag());

    let mut rows = Vec::new();
    for &method in &config.methods {
        for &n in &config.dataset_sizes {
            for &level in &config.confidence_levels {
                let alpha = 1.0 - level;
                let outcomes: Vec<TrialOutcome> = (0..config.n_trials)
                    .into_par_iter()
                    .map(|trial| {
                        let seed = trial_seed(config.master_seed, method, n, level, trial);
                        let start = Instant::now();
                        let result = collect_dataset(&env.mdp, &env.behavior, &env.target, n, config.horizon, seed)
                            .map_err(HarnessError::from)
                            .and_then(|ds| {
                                let ctx = EvalContext {
                                    target: &env.target,
                                    behavior: Some(&env.behavior),
                                    map: &map,
                                    solver: &config.solver,
                                    self_normalize: config.self_normalize,
                                    n_boot: config.n_boot,
                                    seed: derive_seed(seed, &[label("bootstrap")]),
                                    xi_zero: false,
                                };
                                evaluate(method, &ds, alpha, &ctx)
                            });
                        let result = match result {
                            Ok(ci) => Some((covers(ci.lower, ci.upper, truth), reported_width(ci.lower, ci.upper))),
                            Err(e) => {
                                log::debug!("{method} n={n} level={level} trial {trial}: {e}");
                                None
                            }
                        };
                        TrialOutcome {
                            result,
                            runtime_s: start.elapsed().as_secs_f64(),
                        }
                    })
                    .collect();
                let row = aggregate(method, n, level, &outcomes, config.record_runtime);
                log::info!(
                    "{method} n={n} level={level}: coverage {:.3}, median log-width {:.3}, {} failed",
                    row.coverage,
                    row.median_log_width,
                    row.failures
                );
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn aggregate(method: Method, n: usize, level: f64, outcomes: &[TrialOutcome], record_runtime: bool) -> CoverageRow {
    let ok: Vec<(bool, f64)> = outcomes.iter().filter_map(|o| o.result).collect();
    let failures = outcomes.len() - ok.len();
    let coverage = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().filter(|(hit, _)| *hit).count() as f64 / ok.len() as f64
    };
    let logs: Vec<f64> = ok.iter().map(|(_, w)| w.ln()).collect();
    let mean_runtime_s = if record_runtime && !outcomes.is_empty() {
        outcomes.iter().map(|o| o.runtime_s).sum::<f64>() / outcomes.len() as f64
    } else {
        f64::NAN
    };
    CoverageRow {
        method,
        n,
        level,
        coverage,
        median_log_width: median(logs),
        failures,
        mean_runtime_s,
    }
}

fn rounding_noise(lower: f64, upper: f64) -> f64 {
    64.0 * f64::EPSILON * lower.abs().max(upper.abs()).max(1.0)
}

/// `lower <= truth <= upper`, with endpoints allowed 64 ulp of rounding.
pub fn covers(lower: f64, upper: f64, truth: f64) -> bool {
    let noise = rounding_noise(lower, upper);
    lower - noise <= truth && truth <= upper + noise
}

/// Width with rounding noise removed: gaps within 64 ulp of the endpoints'
/// magnitude count as 0, so collapsed intervals get a log-width of -inf.
pub fn reported_width(lower: f64, upper: f64) -> f64 {
    let width = upper - lower;
    if width <= rounding_noise(lower, upper) {
        0.0
    } else {
        width
    }
}

/// Median with the midpoint convention for even lengths; NaN when empty.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 || v[m - 1] == v[m] {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn format_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        x.to_string()
    }
}

pub fn write_csv(rows: &[CoverageRow], output_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(output_dir).map_err(|source| HarnessError::File {
        path: output_dir.display().to_string(),
        source,
    })?;
    let path = output_dir.join(CSV_NAME);
    let mut out = csv::Writer::from_path(&path)?;
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.method.name().to_string(),
            r.n.to_string(),
            format_real(r.level),
            format_real(r.coverage),
            format_real(r.median_log_width),
            r.failures.to_string(),
            format_real(r.mean_runtime_s),
        ])?;
    }
    out.flush()?;
    Ok(path)
}
