//! CoinDICE confidence intervals.
//!
//! For weights `w` on the samples let `ρ̂(w) = max_{τ>=0} min_β E_w[ℓ(x; τ, β)]`
//! with `ℓ = τ(s,a)·r + β·Δ(x; τ, φ)`. The interval is the range of `ρ̂` over
//! the divergence ball `K_f` (see [`crate::divergences`]).
//!
//! Each bound is computed by an outer loop over `w`. Starting from uniform
//! weights (whose value is the point estimate), every step evaluates the
//! per-sample scores `ℓ_i` at the current inner saddle point, moves `w` to the
//! closed-form optimum of `E_w[ℓ]` over `K_f` (or one multiplicative step in
//! gradient mode), and re-solves the inner problem. A step is kept only if
//! it improves the bound; otherwise it is halved, so the reported bounds
//! always bracket the point estimate.

mod bandit;
mod correction;
mod inner;

use serde::{Deserialize, Serialize};

use crate::divergences::{ball_optimum, DivergenceSpec, Direction, WeightVector};
use crate::envs::Dataset;
use crate::features::{FeatureMap, TauTable};
use crate::mdp::TabularPolicy;
use crate::rng::{seeded, ChaCha20Rng};
use crate::special::chi2_quantile_1dof;
use crate::{ConfidenceInterval, Error, Result};

pub use bandit::{coin_bandit_interval, coin_bandit_interval_with_xi};
pub use correction::{finite_sample_correction, RegularityConstants};
use inner::{exact_solve, gradient_solve, GradientParams, InnerSolution, Residual, ResidualModel};

/// Scores beyond this magnitude are treated as a diverged optimization.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUpdate {
    /// Exact optimum over the ball at the current scores.
    ClosedForm,
    /// One multiplicative step `w ∝ exp(ηℓ) w^(1-ηλ) (1/n)^(ηλ)` with a
    /// dual-ascent update of λ.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Exact solve, falling back to descent-ascent on rank-deficient systems.
    Auto,
    Exact,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Descent-ascent steps per inner solve (gradient solver only).
    pub inner_steps: usize,
    /// Maximum outer (weight) iterations per bound.
    pub outer_steps: usize,
    pub beta_step: f64,
    /// Step on log τ.
    pub tau_step: f64,
    pub weight_update: WeightUpdate,
    /// η of the multiplicative weight step.
    pub weight_step: f64,
    pub inner_solver: InnerSolver,
    /// ν of the quadratic normalization penalty ν(E_w[τ] - 1)².
    pub normalization_penalty: f64,
    /// Augmented-Lagrangian coefficient of the gradient solver.
    pub alm_penalty: f64,
    /// α_reg of the optional α_reg·E_w[τ²] regularizer (gradient solver).
    pub tau_regularizer: f64,
    /// Upper bound C_τ on τ.
    pub c_tau: f64,
    /// Bound change counted as "no progress".
    pub tolerance: f64,
    /// Consecutive no-progress steps before stopping.
    pub patience: usize,
    pub line_search_halvings: usize,
    pub minibatch_size: Option<usize>,
    /// Replace φ(s0,a0) and φ(s',a') by their expectations under the target.
    pub expected_target_features: bool,
    /// When set, widen the interval by κ_n.
    pub finite_sample: Option<RegularityConstants>,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            inner_steps: 1000,
            outer_steps: 50,
            beta_step: 0.1,
            tau_step: 0.05,
            weight_update: WeightUpdate::ClosedForm,
            weight_step: 0.5,
            inner_solver: InnerSolver::Auto,
            normalization_penalty: 1.0,
            alm_penalty: 1.0,
            tau_regularizer: 0.0,
            c_tau: 100.0,
            tolerance: 1e-7,
            patience: 10,
            line_search_halvings: 20,
            minibatch_size: None,
            expected_target_features: false,
            finite_sample: None,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_steps == 0 || self.inner_steps == 0 || self.patience == 0 {
            return Err(Error::invalid("solver", "step counts must be positive"));
        }
        for (field, v) in [
            ("beta_step", self.beta_step),
            ("tau_step", self.tau_step),
            ("weight_step", self.weight_step),
            ("c_tau", self.c_tau),
            ("tolerance", self.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("{v} must be positive")));
            }
        }
        for (field, v) in [
            ("normalization_penalty", self.normalization_penalty),
            ("alm_penalty", self.alm_penalty),
            ("tau_regularizer", self.tau_regularizer),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("{v} must be nonnegative")));
            }
        }
        if self.minibatch_size == Some(0) {
            return Err(Error::invalid("minibatch_size", "must be positive"));
        }
        Ok(())
    }

    fn gradient_params(&self, outer_iteration: usize) -> GradientParams {
        GradientParams {
            steps: self.inner_steps,
            beta_step: self.beta_step,
            tau_step: self.tau_step,
            alm_penalty: self.alm_penalty,
            tau_regularizer: self.tau_regularizer,
            c_tau: self.c_tau,
            minibatch: self.minibatch_size,
            outer_iteration,
        }
    }
}

/// State of one bound's optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub tau: TauTable,
    pub beta: Vec<f64>,
    /// Multiplier of the divergence constraint at the last weight update.
    pub lambda: f64,
    pub eta: f64,
    pub weights: WeightVector,
    pub iteration: usize,
}

/// One bound with its saddle state and convergence information.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    pub state: SaddleState,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub exact: bool,
}

/// Interval plus the saddle states behind both bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub interval: ConfidenceInterval,
    pub lower: BoundResult,
    pub upper: BoundResult,
}

/// Per-sample Lagrangian `ℓ_i = τ(s_i,a_i) r_i + β·Δ(x_i; τ, φ)`.
pub fn lagrangian_scores(
    dataset: &Dataset,
    tau: &TauTable,
    beta: &[f64],
    map: &FeatureMap,
    gamma: f64,
) -> Result<Vec<f64>> {
    if beta.len() != map.dim() {
        return Err(Error::invalid("beta", format!("length {} != feature dim {}", beta.len(), map.dim())));
    }
    if tau.n_states != map.n_states() || tau.n_actions != map.n_actions() {
        return Err(Error::invalid("tau", "shape does not match the feature map"));
    }
    dataset
        .tuples
        .iter()
        .map(|x| {
            let t = tau.get(x.s, x.a);
            let delta = map.delta(x, t, gamma)?;
            Ok(t * x.r + beta.iter().zip(&delta).map(|(b, d)| b * d).sum::<f64>())
        })
        .collect()
}

fn check_gamma_discounted(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "gamma",
            format!("{gamma} outside (0, 1); use solve_bounds_undiscounted for gamma = 1"),
        ))
    }
}

fn xi_for(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} outside (0, 1)")));
    }
    chi2_quantile_1dof(1.0 - alpha)
}

fn discounted_model(
    dataset: &Dataset,
    map: &FeatureMap,
    target: Option<&TabularPolicy>,
    gamma: f64,
    config: &SolverConfig,
) -> Result<ResidualModel> {
    check_gamma_discounted(gamma)?;
    config.validate()?;
    ResidualModel::build(
        dataset,
        map,
        Residual::Discounted {
            gamma,
            penalty: config.normalization_penalty,
            expected_under: target.filter(|_| config.expected_target_features),
        },
    )
}

/// Saddle value of the unweighted empirical Lagrangian.
pub fn point_estimate(dataset: &Dataset, map: &FeatureMap, gamma: f64, config: &SolverConfig) -> Result<f64> {
    let model = discounted_model(dataset, map, None, gamma, config)?;
    let w = vec![1.0 / model.n as f64; model.n];
    let mut rng = seeded(config.seed);
    let sol = solve_inner(&model, &w, config, None, 1, &mut rng);
    if sol.primal_residual > 1e-6 {
        log::debug!("point estimate: estimating equations not met, residual {:e}", sol.primal_residual);
    }
    check_finite(sol.value, "point")?;
    Ok(sol.value)
}

/// Discounted CoinDICE interval at level 1 - α with ξ = χ²₁(1 - α).
#[allow(clippy::too_many_arguments)]
pub fn solve_bounds(
    dataset: &Dataset,
    map: &FeatureMap,
    target: &TabularPolicy,
    gamma: f64,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
) -> Result<ConfidenceInterval> {
    let xi = xi_for(alpha)?;
    Ok(solve_bounds_with_xi(dataset, map, target, gamma, xi, alpha, divergence, config)?.interval)
}

/// As [`solve_bounds`] with an explicit radius ξ (ξ = 0 collapses the
/// interval to the point estimate). `alpha` is only recorded.
#[allow(clippy::too_many_arguments)]
pub fn solve_bounds_with_xi(
    dataset: &Dataset,
    map: &FeatureMap,
    target: &TabularPolicy,
    gamma: f64,
    xi: f64,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
) -> Result<BoundsReport> {
    let model = discounted_model(dataset, map, Some(target), gamma, config)?;
    let method = format!("coindice_{}", kind_tag(divergence));
    let mut report = run_bounds(&model, xi, alpha, divergence, config, &method)?;
    if let Some(constants) = config.finite_sample {
        let kappa = constants.kappa(xi, model.n, gamma)?;
        report.interval = report.interval.widened(kappa);
    }
    Ok(report)
}

/// Average-reward (γ = 1) interval. The estimating equations are
/// `E_w[τ(φ(s',a') - φ(s,a))] = 0` together with the exact normalization
/// `E_w[τ] = 1`.
pub fn solve_bounds_undiscounted(
    dataset: &Dataset,
    map: &FeatureMap,
    target: &TabularPolicy,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
) -> Result<ConfidenceInterval> {
    let xi = xi_for(alpha)?;
    Ok(solve_bounds_undiscounted_with_xi(dataset, map, target, xi, alpha, divergence, config)?.interval)
}

pub fn solve_bounds_undiscounted_with_xi(
    dataset: &Dataset,
    map: &FeatureMap,
    target: &TabularPolicy,
    xi: f64,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
) -> Result<BoundsReport> {
    config.validate()?;
    let model = ResidualModel::build(
        dataset,
        map,
        Residual::Undiscounted {
            expected_under: config.expected_target_features.then_some(target),
        },
    )?;
    let method = format!("coindice_{}_undiscounted", kind_tag(divergence));
    run_bounds(&model, xi, alpha, divergence, config, &method)
}

pub(crate) fn kind_tag(divergence: &DivergenceSpec) -> &'static str {
    match divergence.kind {
        crate::divergences::DivergenceKind::ModifiedKl => "kl",
        crate::divergences::DivergenceKind::ChiSquare => "chi2",
        crate::divergences::DivergenceKind::ReverseKl => "reverse_kl",
    }
}

fn check_finite(value: f64, bound: &str) -> Result<()> {
    if value.is_finite() && value.abs() <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(Error::Diverged {
            bound: bound.into(),
            reason: format!("value {value:e} exceeds {DIVERGENCE_LIMIT:e}"),
        })
    }
}

fn solve_inner(
    model: &ResidualModel,
    w: &[f64],
    config: &SolverConfig,
    warm: Option<&InnerSolution>,
    outer_iteration: usize,
    rng: &mut ChaCha20Rng,
) -> InnerSolution {
    let params = config.gradient_params(outer_iteration);
    match config.inner_solver {
        InnerSolver::Exact => exact_solve(model, w, config.c_tau),
        InnerSolver::Gradient => gradient_solve(model, w, &params, warm, rng),
        InnerSolver::Auto => {
            let sol = exact_solve(model, w, config.c_tau);
            if sol.rank_deficient {
                gradient_solve(model, w, &params, Some(&sol), rng)
            } else {
                sol
            }
        }
    }
}

pub(crate) fn run_bounds(
    model: &ResidualModel,
    xi: f64,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
    method: &str,
) -> Result<BoundsReport> {
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::invalid("xi", format!("{xi} must be finite and nonnegative")));
    }
    let n = model.n;
    let uniform = vec![1.0 / n as f64; n];
    let mut rng = seeded(config.seed);
    let start = solve_inner(model, &uniform, config, None, 1, &mut rng);
    check_finite(start.value, "point")?;

    let lower = optimize_bound(model, &start, xi, divergence, config, Direction::Min, &mut rng)?;
    let upper = optimize_bound(model, &start, xi, divergence, config, Direction::Max, &mut rng)?;

    let mut interval = ConfidenceInterval::new(lower.value, upper.value, start.value, alpha, method)
        .with_diagnostic("xi", xi)
        .with_diagnostic("n", n as f64)
        .with_diagnostic("visited_cells", model.m() as f64)
        .with_diagnostic("point_primal_residual", start.primal_residual);
    for (tag, b) in [("lower", &lower), ("upper", &upper)] {
        interval = interval
            .with_diagnostic(&format!("final_divergence_{tag}"), b.state.weights.achieved_divergence)
            .with_diagnostic(&format!("primal_residual_{tag}"), b.primal_residual)
            .with_diagnostic(&format!("dual_residual_{tag}"), b.dual_residual)
            .with_diagnostic(&format!("outer_iterations_{tag}"), b.state.iteration as f64)
            .with_diagnostic(&format!("converged_{tag}"), f64::from(u8::from(b.converged)));
    }
    let exact = lower.exact && upper.exact && start.exact;
    interval = interval.with_diagnostic("inner_solver_exact", f64::from(u8::from(exact)));
    Ok(BoundsReport { interval, lower, upper })
}

fn better(direction: Direction, candidate: f64, current: f64) -> bool {
    match direction {
        Direction::Max => candidate > current,
        Direction::Min => candidate < current,
    }
}

/// One multiplicative step toward larger (or smaller) E_w[ℓ], pulled back
/// into the ball by mixing with uniform weights when it leaves it.
fn gradient_weight_step(
    divergence: &DivergenceSpec,
    w: &[f64],
    scores: &[f64],
    radius: f64,
    step: f64,
    lambda: &mut f64,
    direction: Direction,
) -> Vec<f64> {
    let n = w.len() as f64;
    let sign = if direction == Direction::Max { 1.0 } else { -1.0 };
    let shrink = (step * *lambda).min(1.0);
    let logits: Vec<f64> = w
        .iter()
        .zip(scores)
        .map(|(&wi, &l)| step * sign * l + (1.0 - shrink) * wi.max(1e-300).ln() - shrink * n.ln())
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);

    let div = |v: &[f64]| crate::divergences::divergence_value(divergence, v).unwrap_or(f64::INFINITY);
    let d = div(&out);
    *lambda = (*lambda + step * (d - radius)).max(0.0);
    if d > radius {
        let (mut lo, mut hi) = (0.0, 1.0);
        let mix = |t: f64| -> Vec<f64> { out.iter().map(|x| t * x + (1.0 - t) / n).collect() };
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if div(&mix(mid)) > radius {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out = mix(lo);
    }
    out
}

fn optimize_bound(
    model: &ResidualModel,
    start: &InnerSolution,
    xi: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
    direction: Direction,
    rng: &mut ChaCha20Rng,
) -> Result<BoundResult> {
    let name = if direction == Direction::Max { "upper" } else { "lower" };
    let n = model.n;
    let radius = xi / n as f64;
    let mut w = vec![1.0 / n as f64; n];
    let mut sol = start.clone();
    let mut lambda = if config.weight_update == WeightUpdate::Gradient { 1.0 } else { f64::INFINITY };
    let mut eta = 0.0;
    let mut iteration = 0;
    let mut quiet = 0;
    let mut converged = false;

    for k in 1..=config.outer_steps {
        iteration = k;
        let scores = model.scores(&sol.tau, &sol.beta);
        if let Some(bad) = scores.iter().find(|s| !(s.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged {
                bound: name.into(),
                reason: format!("score magnitude {bad:e} exceeds {DIVERGENCE_LIMIT:e}"),
            });
        }
        let target = match config.weight_update {
            WeightUpdate::ClosedForm => {
                let ball = ball_optimum(divergence, &scores, xi, direction)?;
                lambda = ball.lambda;
                eta = ball.eta;
                ball.weights.w
            }
            WeightUpdate::Gradient => {
                gradient_weight_step(divergence, &w, &scores, radius, config.weight_step, &mut lambda, direction)
            }
        };

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..=config.line_search_halvings {
            let candidate_w: Vec<f64> = w.iter().zip(&target).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let candidate = solve_inner(model, &candidate_w, config, Some(&sol), k, rng);
            if candidate.value.is_finite() && better(direction, candidate.value, sol.value) {
                accepted = Some((candidate_w, candidate));
                break;
            }
            t *= 0.5;
        }
        let Some((new_w, new_sol)) = accepted else {
            converged = true;
            break;
        };
        check_finite(new_sol.value, name)?;
        let change = (new_sol.value - sol.value).abs();
        w = new_w;
        sol = new_sol;
        if change < config.tolerance {
            quiet += 1;
            if quiet >= config.patience {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }

    let achieved_divergence = crate::divergences::divergence_value(divergence, &w)?;
    let tau = TauTable {
        n_states: model.n_states,
        n_actions: model.n_actions,
        values: model.full_tau(&sol.tau),
    };
    Ok(BoundResult {
        value: sol.value,
        state: SaddleState {
            tau,
            beta: sol.beta.clone(),
            lambda,
            eta,
            weights: WeightVector { w, achieved_divergence },
            iteration,
        },
        converged,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        exact: sol.exact,
    })
}
