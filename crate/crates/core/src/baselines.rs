//! Importance-sampling baselines.
//!
//! Each trajectory j of length H gets the normalized stepwise estimate
//!
//! ```text
//! v_j = (1 - γ) / (1 - γ^H) · Σ_t γ^t (Π_{k<=t} ρ_k) r_t,   ρ_k = π(a_k|s_k) / π_b(a_k|s_k)
//! ```
//!
//! (for γ = 1 the prefactor is 1/H). With `self_normalize` the cumulative
//! ratio at step t is divided by its mean over the trajectories that reach
//! step t. Values are clipped to `[0, clip_bound]` and then summarized by one
//! of three intervals: empirical Bernstein, Student's t or BCa bootstrap.
//!
//! Unlike CoinDICE these estimators need the behavior policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Dataset;
use crate::mdp::TabularPolicy;
use crate::rng::seeded;
use crate::special::{normal_cdf, normal_quantile, student_t_quantile};
use crate::{ConfidenceInterval, Error, Result};

/// Default number of bootstrap replicates.
pub const DEFAULT_N_BOOT: usize = 2000;

/// Per-trajectory normalized IS returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimates {
    pub values: Vec<f64>,
    pub clip_bound: f64,
    /// How many values were moved into `[0, clip_bound]`.
    #[serde(default)]
    pub n_clipped: usize,
}

impl TrajectoryEstimates {
    /// Wraps raw values, clipping them to `[0, clip_bound]`.
    pub fn new(values: Vec<f64>, clip_bound: f64) -> Result<Self> {
        if !(clip_bound > 0.0 && clip_bound.is_finite()) {
            return Err(Error::invalid("clip_bound", format!("{clip_bound} must be positive and finite")));
        }
        let mut n_clipped = 0;
        let mut out = Vec::with_capacity(values.len());
        for v in values {
            if !v.is_finite() {
                return Err(Error::invalid("values", "estimates must be finite"));
            }
            let c = v.clamp(0.0, clip_bound);
            if c != v {
                n_clipped += 1;
            }
            out.push(c);
        }
        Ok(Self {
            values: out,
            clip_bound,
            n_clipped,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sum of squared deviations from the mean.
fn sum_sq_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("{alpha} must lie in (0, 1)")))
    }
}

fn check_len(estimates: &TrajectoryEstimates) -> Result<()> {
    if estimates.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: estimates.len(),
        });
    }
    Ok(())
}

/// Stepwise IS estimate of each trajectory in `dataset`, clipped to
/// `[0, dataset.r_max()]`.
///
/// Clipping at r_max biases the estimates downward whenever ratios exceed 1;
/// use [`stepwise_is_returns`] with [`TrajectoryEstimates::new`] for another bound.
pub fn stepwise_is_estimates(
    dataset: &Dataset,
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    gamma: f64,
    self_normalize: bool,
) -> Result<TrajectoryEstimates> {
    let raw = stepwise_is_returns(dataset, target, behavior, gamma, self_normalize)?;
    TrajectoryEstimates::new(raw, dataset.r_max())
}

/// Unclipped stepwise IS estimates, one per trajectory in id order.
pub fn stepwise_is_returns(
    dataset: &Dataset,
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    gamma: f64,
    self_normalize: bool,
) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("{gamma} must lie in (0, 1]")));
    }
    for (name, p) in [("target", target), ("behavior", behavior)] {
        if p.n_states() != dataset.n_states() || p.n_actions() != dataset.n_actions() {
            return Err(Error::invalid(name, "policy shape does not match the dataset"));
        }
    }
    let trajectories = dataset.trajectories();
    if trajectories.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }

    // Cumulative ratios per trajectory and step.
    let mut ratios: Vec<Vec<f64>> = Vec::with_capacity(trajectories.len());
    for traj in &trajectories {
        let mut acc = 1.0;
        let mut row = Vec::with_capacity(traj.len());
        for t in traj {
            let pb = behavior.prob(t.s, t.a);
            if pb <= 0.0 {
                return Err(Error::ZeroBehaviorProbability { state: t.s, action: t.a });
            }
            acc *= target.prob(t.s, t.a) / pb;
            row.push(acc);
        }
        ratios.push(row);
    }

    let horizon = ratios.iter().map(Vec::len).max().unwrap_or(0);
    let mut step_mean = vec![1.0; horizon];
    if self_normalize {
        for (t, m) in step_mean.iter_mut().enumerate() {
            let reached: Vec<f64> = ratios.iter().filter_map(|r| r.get(t).copied()).collect();
            let avg = mean(&reached);
            *m = if avg > 0.0 { avg } else { 1.0 };
        }
    }

    let mut values = Vec::with_capacity(trajectories.len());
    for (traj, rho) in trajectories.iter().zip(&ratios) {
        let h = traj.len();
        let norm = if gamma < 1.0 {
            (1.0 - gamma) / (1.0 - gamma.powi(h as i32))
        } else {
            1.0 / h as f64
        };
        let mut total = 0.0;
        let mut discount = 1.0;
        for (t, step) in traj.iter().enumerate() {
            total += discount * rho[t] / step_mean[t] * step.r;
            discount *= gamma;
        }
        values.push(norm * total);
    }
    Ok(values)
}

/// Empirical Bernstein interval, α/2 per side:
/// mean ± ( sqrt(2 s² ln(6/α) / n) + 3 M ln(6/α) / n ), s² = (1/n) Σ (v - mean)².
pub fn bernstein_interval(estimates: &TrajectoryEstimates, alpha: f64, range_bound: f64) -> Result<ConfidenceInterval> {
    check_len(estimates)?;
    check_alpha(alpha)?;
    if !(range_bound > 0.0 && range_bound.is_finite()) {
        return Err(Error::invalid("range_bound", format!("{range_bound} must be positive and finite")));
    }
    let v = &estimates.values;
    let n = v.len() as f64;
    let m = mean(v);
    let var = sum_sq_dev(v) / n;
    let log_term = (6.0 / alpha).ln();
    let half = (2.0 * var * log_term / n).sqrt() + 3.0 * range_bound * log_term / n;
    Ok(ConfidenceInterval::new(m - half, m + half, m, alpha, "bernstein")
        .with_diagnostic("n", n)
        .with_diagnostic("variance", var)
        .with_diagnostic("range_bound", range_bound))
}

/// Student's t interval: mean ± t_{n-1, 1-α/2} s / sqrt(n), s² with n - 1.
pub fn t_interval(estimates: &TrajectoryEstimates, alpha: f64) -> Result<ConfidenceInterval> {
    check_len(estimates)?;
    check_alpha(alpha)?;
    let v = &estimates.values;
    let n = v.len() as f64;
    let m = mean(v);
    let sd = (sum_sq_dev(v) / (n - 1.0)).sqrt();
    let q = student_t_quantile(n - 1.0, 1.0 - alpha / 2.0)?;
    let half = q * sd / n.sqrt();
    Ok(ConfidenceInterval::new(m - half, m + half, m, alpha, "student_t")
        .with_diagnostic("n", n)
        .with_diagnostic("t_quantile", q))
}

/// Linear-interpolation quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// BCa bootstrap interval for the mean.
pub fn bca_bootstrap_interval(
    estimates: &TrajectoryEstimates,
    alpha: f64,
    n_boot: usize,
    seed: u64,
) -> Result<ConfidenceInterval> {
    check_len(estimates)?;
    check_alpha(alpha)?;
    if n_boot < 2 {
        return Err(Error::invalid("n_boot", "need at least 2 replicates"));
    }
    let v = &estimates.values;
    let n = v.len();
    let m = mean(v);
    if v.iter().all(|&x| x == v[0]) {
        return Ok(ConfidenceInterval::new(m, m, m, alpha, "bca_bootstrap")
            .with_diagnostic("z0", 0.0)
            .with_diagnostic("acceleration", 0.0));
    }

    let mut rng = seeded(seed);
    let mut boot: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| v[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boot.sort_by(f64::total_cmp);

    let below = boot.iter().filter(|&&b| b < m).count() as f64;
    let frac = (below / n_boot as f64).clamp(0.5 / n_boot as f64, 1.0 - 0.5 / n_boot as f64);
    let z0 = normal_quantile(frac)?;

    // Jackknife acceleration.
    let total: f64 = v.iter().sum();
    let jack: Vec<f64> = v.iter().map(|x| (total - x) / (n - 1) as f64).collect();
    let jm = mean(&jack);
    let (num, den) = jack.iter().fold((0.0, 0.0), |(a, b), j| {
        let d = jm - j;
        (a + d * d * d, b + d * d)
    });
    let accel = if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 };

    let adjust = |p: f64| -> Result<f64> {
        let z = normal_quantile(p)?;
        let shifted = z0 + z;
        Ok(normal_cdf(z0 + shifted / (1.0 - accel * shifted)))
    };
    let p_lo = adjust(alpha / 2.0)?;
    let p_hi = adjust(1.0 - alpha / 2.0)?;
    let lower = sorted_quantile(&boot, p_lo).min(m);
    let upper = sorted_quantile(&boot, p_hi).max(m);
    Ok(ConfidenceInterval::new(lower, upper, m, alpha, "bca_bootstrap")
        .with_diagnostic("n", n as f64)
        .with_diagnostic("n_boot", n_boot as f64)
        .with_diagnostic("z0", z0)
        .with_diagnostic("acceleration", accel))
}
