//! Dispatch from method names to estimators.

use std::fmt;
use std::str::FromStr;

use hcope_core::baselines::{
    bca_bootstrap_interval, bernstein_interval, stepwise_is_estimates, stepwise_is_returns, t_interval, TrajectoryEstimates,
};
use hcope_core::coindice::{solve_bounds_undiscounted_with_xi, solve_bounds_with_xi, SolverConfig};
use hcope_core::divergences::DivergenceSpec;
use hcope_core::envs::Dataset;
use hcope_core::features::FeatureMap;
use hcope_core::mdp::TabularPolicy;
use hcope_core::special::chi2_quantile_1dof;
use hcope_core::ConfidenceInterval;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CoindiceKl,
    CoindiceChi2,
    Bernstein,
    TTest,
    Bootstrap,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::CoindiceKl,
        Method::CoindiceChi2,
        Method::Bernstein,
        Method::TTest,
        Method::Bootstrap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CoindiceKl => "coindice_kl",
            Method::CoindiceChi2 => "coindice_chi2",
            Method::Bernstein => "bernstein",
            Method::TTest => "t_test",
            Method::Bootstrap => "bootstrap",
        }
    }

    pub fn is_coindice(self) -> bool {
        matches!(self, Method::CoindiceKl | Method::CoindiceChi2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                HarnessError::config("method", format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Everything an estimator may need besides the data.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub target: &'a TabularPolicy,
    /// Required by the importance-sampling baselines only.
    pub behavior: Option<&'a TabularPolicy>,
    pub map: &'a FeatureMap,
    pub solver: &'a SolverConfig,
    pub self_normalize: bool,
    pub n_boot: usize,
    /// Seed of the bootstrap resampling.
    pub seed: u64,
    /// Force ξ = 0 for CoinDICE (debugging aid).
    pub xi_zero: bool,
}

/// Interval of `method` at level 1 - α on `dataset`. Datasets with γ = 1 use
/// the average-reward CoinDICE variant.
pub fn evaluate(method: Method, dataset: &Dataset, alpha: f64, ctx: &EvalContext<'_>) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::config("alpha", format!("{alpha} outside (0, 1)")));
    }
    let gamma = dataset.gamma();
    if method.is_coindice() {
        let div = match method {
            Method::CoindiceKl => DivergenceSpec::modified_kl(),
            _ => DivergenceSpec::chi_square(),
        };
        let xi = if ctx.xi_zero { 0.0 } else { chi2_quantile_1dof(1.0 - alpha)? };
        let report = if gamma < 1.0 {
            solve_bounds_with_xi(dataset, ctx.map, ctx.target, gamma, xi, alpha, &div, ctx.solver)?
        } else {
            solve_bounds_undiscounted_with_xi(dataset, ctx.map, ctx.target, xi, alpha, &div, ctx.solver)?
        };
        return Ok(report.interval);
    }
    if ctx.xi_zero {
        return Err(HarnessError::config("xi_zero", "applies to CoinDICE methods only"));
    }
    let behavior = ctx
        .behavior
        .ok_or_else(|| HarnessError::config("behavior", format!("{method} needs the behavior policy")))?;
    // Only Bernstein needs bounded values; t and BCa see the raw estimates.
    let estimates = if method == Method::Bernstein {
        stepwise_is_estimates(dataset, ctx.target, behavior, gamma, ctx.self_normalize)?
    } else {
        let raw = stepwise_is_returns(dataset, ctx.target, behavior, gamma, ctx.self_normalize)?;
        let bound = raw.iter().copied().fold(dataset.r_max(), f64::max);
        TrajectoryEstimates::new(raw, bound)?
    };
    let ci = match method {
        Method::Bernstein => bernstein_interval(&estimates, alpha, dataset.r_max())?,
        Method::TTest => t_interval(&estimates, alpha)?,
        _ => bca_bootstrap_interval(&estimates, alpha, ctx.n_boot, ctx.seed)?,
    };
    Ok(ci.with_diagnostic("n_clipped", estimates.n_clipped as f64))
}
