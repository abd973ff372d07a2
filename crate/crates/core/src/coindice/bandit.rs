//! Contextless-bandit intervals.
//!
//! Behavior known: with fixed ratios `τ_i = π(a_i)/π_b(a_i)` the bounds are
//! `max/min E_w[τ r]` over `{ w : D_f(w) <= D_min + ξ/n, E_w[τ] = 1 }`, where
//! `D_min` is the smallest divergence compatible with the normalization.
//! The optimum is a tilt `w = tilt(θ z + κ τ)`; κ is set by an inner
//! bisection so that `E_w[τ] = 1` and θ by an outer bisection on the
//! divergence.
//!
//! Behavior agnostic: the generic solver with residual
//! `φ(s0,a0) - τ(s,a) φ(s,a)`, whose solution at weights w is
//! `τ(a) = W0(a) / W(a)` (target-action mass over logged-action mass).

use super::inner::{Residual, ResidualModel};
use super::{kind_tag, run_bounds, xi_for, SolverConfig};
use crate::divergences::{tilt, DivergenceSpec};
use crate::envs::Dataset;
use crate::features::FeatureMap;
use crate::mdp::TabularPolicy;
use crate::{ConfidenceInterval, Error, Result};

const MAX_BISECTIONS: usize = 200;

/// CoinBandit interval at level 1 - α. With `behavior_known` the ratios
/// are fixed; without it τ is estimated from the data.
pub fn coin_bandit_interval(
    dataset: &Dataset,
    target: &TabularPolicy,
    behavior_known: Option<&TabularPolicy>,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
) -> Result<ConfidenceInterval> {
    let xi = xi_for(alpha)?;
    coin_bandit_interval_with_xi(dataset, target, behavior_known, xi, alpha, divergence, config)
}

/// As [`coin_bandit_interval`] with an explicit radius ξ.
pub fn coin_bandit_interval_with_xi(
    dataset: &Dataset,
    target: &TabularPolicy,
    behavior_known: Option<&TabularPolicy>,
    xi: f64,
    alpha: f64,
    divergence: &DivergenceSpec,
    config: &SolverConfig,
) -> Result<ConfidenceInterval> {
    if target.n_states() != dataset.n_states() || target.n_actions() != dataset.n_actions() {
        return Err(Error::invalid("target", "policy shape does not match the dataset"));
    }
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::invalid("xi", format!("{xi} must be finite and nonnegative")));
    }
    config.validate()?;
    match behavior_known {
        Some(behavior) => known_behavior(dataset, target, behavior, xi, alpha, divergence),
        None => {
            let map = FeatureMap::indicator(dataset.n_states(), dataset.n_actions());
            let model = ResidualModel::build(
                dataset,
                &map,
                Residual::Bandit {
                    penalty: config.normalization_penalty,
                },
            )?;
            let method = format!("coinbandit_{}", kind_tag(divergence));
            Ok(run_bounds(&model, xi, alpha, divergence, config, &method)?.interval)
        }
    }
}

/// Largest and smallest entries.
fn extent(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// True when z = a + bτ for some (a, b): then every tilt θz + κτ is a shift
/// of κ'τ and the normalization alone fixes E_w[z].
fn affine_in_tau(z: &[f64], tau: &[f64]) -> bool {
    let n = z.len() as f64;
    let (zm, tm) = (z.iter().sum::<f64>() / n, tau.iter().sum::<f64>() / n);
    let stt: f64 = tau.iter().map(|t| (t - tm).powi(2)).sum();
    let slope = if stt > 0.0 {
        tau.iter().zip(z).map(|(t, z)| (t - tm) * (z - zm)).sum::<f64>() / stt
    } else {
        0.0
    };
    let resid: f64 = tau.iter().zip(z).map(|(t, z)| (z - zm - slope * (t - tm)).powi(2)).sum();
    let scale: f64 = z.iter().map(|z| (z - zm).powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);
    resid <= 1e-20 * scale || resid == 0.0
}

/// Tilted weights at strength θ on `z`, with κ chosen so E_w[τ] = 1.
fn normalized_tilt(kind: crate::divergences::DivergenceKind, z: &[f64], tau: &[f64], theta: f64) -> (Vec<f64>, f64) {
    let weights = |kappa: f64| -> Vec<f64> {
        let c: Vec<f64> = z.iter().zip(tau).map(|(zi, ti)| theta * zi + kappa * ti).collect();
        tilt(kind, &c).0
    };
    let mass = |kappa: f64| -> f64 { weights(kappa).iter().zip(tau).map(|(w, t)| w * t).sum() };
    let (tmin, tmax) = extent(tau);
    if tmax == tmin {
        return (weights(0.0), 0.0);
    }
    // E_w[τ] increases in κ; expand a bracket then bisect.
    let scale = 1.0 / (tmax - tmin);
    let (mut lo, mut hi) = (-scale, scale);
    while mass(lo) > 1.0 && lo > -1e12 * scale {
        lo *= 2.0;
    }
    while mass(hi) < 1.0 && hi < 1e12 * scale {
        hi *= 2.0;
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa = 0.5 * (lo + hi);
    (weights(kappa), kappa)
}

fn known_behavior(
    dataset: &Dataset,
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    xi: f64,
    alpha: f64,
    divergence: &DivergenceSpec,
) -> Result<ConfidenceInterval> {
    if behavior.n_states() != dataset.n_states() || behavior.n_actions() != dataset.n_actions() {
        return Err(Error::invalid("behavior", "policy shape does not match the dataset"));
    }
    if dataset.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let mut tau = Vec::with_capacity(dataset.len());
    for t in &dataset.tuples {
        let pb = behavior.prob(t.s, t.a);
        if pb <= 0.0 {
            return Err(Error::ZeroBehaviorProbability { state: t.s, action: t.a });
        }
        tau.push(target.prob(t.s, t.a) / pb);
    }
    let (tmin, tmax) = extent(&tau);
    if tmin > 1.0 || tmax < 1.0 {
        return Err(Error::invalid(
            "dataset",
            "normalization E_w[τ] = 1 is infeasible: every logged ratio lies on one side of 1",
        ));
    }
    let z: Vec<f64> = tau.iter().zip(&dataset.tuples).map(|(t, x)| t * x.r).collect();
    let n = z.len();
    let kind = divergence.kind;
    let div = |w: &[f64]| crate::divergences::divergence_value(divergence, w);

    let (w0, _) = normalized_tilt(kind, &z, &tau, 0.0);
    let d_min = div(&w0)?;
    let point: f64 = w0.iter().zip(&z).map(|(w, z)| w * z).sum();
    let radius = d_min + xi / n as f64;

    let bound = |sign: f64| -> Result<(f64, f64, f64)> {
        let signed: Vec<f64> = z.iter().map(|v| sign * v).collect();
        let (zmin, zmax) = extent(&signed);
        if xi == 0.0 || zmax == zmin || affine_in_tau(&signed, &tau) {
            return Ok((point, d_min, 0.0));
        }
        let at = |theta: f64| normalized_tilt(kind, &signed, &tau, theta).0;
        // D(θ) grows with θ; find the largest θ whose weights stay in the ball.
        let unit = 1.0 / (zmax - zmin);
        let mut lo = (1e-10 * unit).ln();
        let mut hi = unit.ln();
        while div(&at(hi.exp()))? < radius && hi < (1e12 * unit).ln() {
            hi += 10f64.ln();
        }
        if div(&at(hi.exp()))? <= radius {
            lo = hi;
        }
        for _ in 0..MAX_BISECTIONS {
            if hi - lo < 1e-10 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if div(&at(mid.exp()))? <= radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = lo.exp();
        let w = at(theta);
        let value: f64 = w.iter().zip(&z).map(|(w, z)| w * z).sum();
        Ok((value, div(&w)?, theta))
    };
    let (upper, d_upper, theta_upper) = bound(1.0)?;
    let (lower, d_lower, theta_lower) = bound(-1.0)?;
    Ok(ConfidenceInterval::new(
        lower.min(point),
        upper.max(point),
        point,
        alpha,
        format!("coinbandit_known_{}", kind_tag(divergence)),
    )
    .with_diagnostic("xi", xi)
    .with_diagnostic("n", n as f64)
    .with_diagnostic("min_divergence", d_min)
    .with_diagnostic("final_divergence_lower", d_lower)
    .with_diagnostic("final_divergence_upper", d_upper)
    .with_diagnostic("theta_lower", theta_lower)
    .with_diagnostic("theta_upper", theta_upper))
}
