use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcope_core::coindice::SolverConfig;
use hcope_core::envs::{collect_dataset, Dataset, EnvironmentSpec};
use hcope_core::mdp::{average_reward, exact_policy_value, TabularMdp, TabularPolicy};
use hcope_harness::experiment::CSV_NAME;
use hcope_harness::{emit_plots, evaluate, run_coverage_experiment, EvalContext, ExperimentConfig, FeatureChoice, HarnessError, Method, Result};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "hcope", version, about = "High-confidence off-policy evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an off-policy dataset (JSONL) from an environment spec.
    GenData {
        /// Environment spec JSON (`"kind": "bandit" | "gridworld"`).
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trajectories: usize,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a confidence interval as JSON.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        alpha: f64,
        /// Environment spec providing the target and behavior policies.
        #[arg(long, conflicts_with_all = ["target", "behavior"])]
        env: Option<PathBuf>,
        /// Target policy JSON (`{"probs": [[...], ...]}`).
        #[arg(long, required_unless_present = "env")]
        target: Option<PathBuf>,
        /// Behavior policy JSON; only the baselines need it.
        #[arg(long)]
        behavior: Option<PathBuf>,
        /// Solver config JSON; defaults apply to missing fields.
        #[arg(long)]
        solver: Option<PathBuf>,
        /// Use a zero-radius ball (CoinDICE only).
        #[arg(long)]
        xi_zero: bool,
        #[arg(long)]
        self_normalize: bool,
        #[arg(long, default_value_t = hcope_core::baselines::DEFAULT_N_BOOT)]
        n_boot: usize,
        /// Seed of the bootstrap resampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a coverage experiment; writes coverage.csv and SVG charts.
    Coverage {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exact normalized value of a policy.
    Oracle {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|source| HarnessError::File {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        HarnessError::Config {
            field: path.display().to_string(),
            reason: e.to_string(),
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            env,
            seed,
            trajectories,
            horizon,
            out,
        } => {
            let spec: EnvironmentSpec = read_json(&env)?;
            let built = spec.build()?;
            for w in &built.warnings {
                log::warn!("{w}");
            }
            let ds = collect_dataset(&built.mdp, &built.behavior, &built.target, trajectories, horizon, seed)?;
            match out {
                Some(path) => {
                    let file = File::create(&path).map_err(|source| HarnessError::File {
                        path: path.display().to_string(),
                        source,
                    })?;
                    ds.write_jsonl(io::BufWriter::new(file))?;
                }
                None => ds.write_jsonl(io::stdout().lock())?,
            }
        }
        Command::Evaluate {
            dataset,
            method,
            alpha,
            env,
            target,
            behavior,
            solver,
            xi_zero,
            self_normalize,
            n_boot,
            seed,
        } => {
            let method: Method = method.parse()?;
            let file = File::open(&dataset).map_err(|source| HarnessError::File {
                path: dataset.display().to_string(),
                source,
            })?;
            let ds = Dataset::read_jsonl(BufReader::new(file))?;
            let (target, behavior) = match (env, target) {
                (Some(env), _) => {
                    let built = read_json::<EnvironmentSpec>(&env)?.build()?;
                    (built.target, Some(built.behavior))
                }
                (None, Some(t)) => {
                    let b = behavior.map(|p| read_json::<TabularPolicy>(&p)).transpose()?;
                    (read_json::<TabularPolicy>(&t)?, b)
                }
                (None, None) => return Err(HarnessError::Config {
                    field: "target".into(),
                    reason: "pass --env or --target".into(),
                }),
            };
            let solver: SolverConfig = solver.map(|p| read_json(&p)).transpose()?.unwrap_or_default();
            let map = FeatureChoice::Indicator.build(ds.n_states(), ds.n_actions())?;
            let ctx = EvalContext {
                target: &target,
                behavior: behavior.as_ref(),
                map: &map,
                solver: &solver,
                self_normalize,
                n_boot,
                seed,
                xi_zero,
            };
            let ci = evaluate(method, &ds, alpha, &ctx)?;
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &ci)?;
            writeln!(out)?;
        }
        Command::Coverage { config, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let rows = run_coverage_experiment(&cfg)?;
            let plots = emit_plots(&rows, cfg.environment.tag(), &cfg.output_dir)?;
            println!("{}", cfg.output_dir.join(CSV_NAME).display());
            for p in plots {
                println!("{}", p.display());
            }
        }
        Command::Oracle { mdp, policy } => {
            let mdp: TabularMdp = read_json(&mdp)?;
            let policy: TabularPolicy = read_json(&policy)?;
            let value = if mdp.gamma() < 1.0 {
                exact_policy_value(&mdp, &policy)?
            } else {
                average_reward(&mdp, &policy)?
            };
            println!("{value:?}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
