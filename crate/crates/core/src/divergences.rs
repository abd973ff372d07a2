//! f-divergences and worst-case reweighting over the empirical ball
//!
//! ```text
//! K_f = { w in simplex : D_f(w || uniform) <= ξ / n },   D_f(w || u) = (1/n) Σ f(n w_i).
//! ```
//!
//! All three generators satisfy f(1) = 0, f'(1) = 0 and f''(1) = 2, so one
//! radius ξ (a χ²₁ quantile) gives the same asymptotic calibration for each.
//! For the modified KL generator D_f = 2 KL, so the ball is KL <= ξ / (2n).
//!
//! The maximizer of `⟨w, z⟩` over `K_f` has the tilted form
//! `f'(n w_i) = (z_i - η) / λ`, i.e. `w = tilt(z / (2λ))` with [`tilt`] below.
//! λ is found by bisection on log λ so that the constraint is active.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const BRACKET_LO: f64 = 1e-10;
const BRACKET_HI: f64 = 1e6;
const MAX_BISECTIONS: usize = 200;
const REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// f(x) = 2x ln x - 2(x - 1).
    ModifiedKl,
    /// f(x) = (x - 1)².
    ChiSquare,
    /// f(x) = 2(x - 1 - ln x). No asymptotic coverage guarantee.
    ReverseKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Max,
    Min,
}

/// A checked f-divergence generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
}

impl DivergenceSpec {
    /// Builds the generator and checks f(1) = 0, f'(1) = 0, f''(1) = 2 by
    /// central differences.
    pub fn new(kind: DivergenceKind) -> Result<Self> {
        let spec = Self { kind };
        let h = 1e-4;
        let (lo, mid, hi) = (spec.f(1.0 - h), spec.f(1.0), spec.f(1.0 + h));
        let d1 = (hi - lo) / (2.0 * h);
        let d2 = (hi - 2.0 * mid + lo) / (h * h);
        if mid.abs() > 1e-12 || d1.abs() > 1e-6 || (d2 - 2.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "divergence",
                format!("{kind:?} fails normalization: f(1)={mid}, f'(1)={d1}, f''(1)={d2}"),
            ));
        }
        if kind == DivergenceKind::ReverseKl {
            log::debug!("reverse KL carries no asymptotic coverage guarantee");
        }
        Ok(spec)
    }

    pub fn modified_kl() -> Self {
        Self::new(DivergenceKind::ModifiedKl).expect("generator is normalized")
    }

    pub fn chi_square() -> Self {
        Self::new(DivergenceKind::ChiSquare).expect("generator is normalized")
    }

    pub fn reverse_kl() -> Self {
        Self::new(DivergenceKind::ReverseKl).expect("generator is normalized")
    }

    /// Generator f on [0, ∞).
    pub fn f(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::ModifiedKl => 2.0 * xlogx(x) - 2.0 * (x - 1.0),
            DivergenceKind::ChiSquare => (x - 1.0) * (x - 1.0),
            DivergenceKind::ReverseKl => {
                if x > 0.0 {
                    2.0 * (x - 1.0 - x.ln())
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::ModifiedKl => 2.0 * x.ln(),
            DivergenceKind::ChiSquare => 2.0 * (x - 1.0),
            DivergenceKind::ReverseKl => 2.0 * (1.0 - 1.0 / x),
        }
    }

    /// Convex conjugate f*(y) = sup_{x >= 0} xy - f(x).
    pub fn conjugate(&self, y: f64) -> f64 {
        match self.kind {
            DivergenceKind::ModifiedKl => 2.0 * ((0.5 * y).exp() - 1.0),
            DivergenceKind::ChiSquare => {
                if y >= -2.0 {
                    y + 0.25 * y * y
                } else {
                    -1.0
                }
            }
            DivergenceKind::ReverseKl => {
                if y < 2.0 {
                    -2.0 * (1.0 - 0.5 * y).ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Divergence of the limiting solution as λ → 0: uniform mass on `k` of
    /// `n` points.
    fn limit_divergence(&self, n: usize, k: usize) -> f64 {
        let (n, k) = (n as f64, k as f64);
        match self.kind {
            DivergenceKind::ModifiedKl => 2.0 * (n / k).ln(),
            DivergenceKind::ChiSquare => (n - k) / k,
            DivergenceKind::ReverseKl if k == n => 0.0,
            DivergenceKind::ReverseKl => f64::INFINITY,
        }
    }

    fn value_unchecked(&self, w: &[f64]) -> f64 {
        let n = w.len() as f64;
        match self.kind {
            DivergenceKind::ChiSquare => w.iter().map(|&wi| (n * wi - 1.0).powi(2)).sum::<f64>() / n,
            // The -2(x-1) terms cancel over the simplex.
            DivergenceKind::ModifiedKl => 2.0 * w.iter().map(|&wi| wi * ln_or_zero(n * wi)).sum::<f64>(),
            DivergenceKind::ReverseKl => w.iter().map(|&wi| self.f(n * wi)).sum::<f64>() / n,
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

fn ln_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        0.0
    }
}

/// D_f(w || uniform) = (1/n) Σ f(n w_i).
pub fn divergence_value(spec: &DivergenceSpec, w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::invalid("w", "empty weight vector"));
    }
    if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::invalid(format!("w[{i}]"), format!("{x} is negative or not finite")));
    }
    Ok(spec.value_unchecked(w))
}

/// Weights on the simplex with their divergence from uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub achieved_divergence: f64,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self {
            w: vec![1.0 / n as f64; n],
            achieved_divergence: 0.0,
        }
    }

    pub fn expectation(&self, z: &[f64]) -> f64 {
        self.w.iter().zip(z).map(|(w, z)| w * z).sum()
    }
}

/// Solution of `max/min ⟨w, z⟩` over `K_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSolution {
    pub weights: WeightVector,
    /// Multiplier of the divergence constraint; `∞` when the ball collapses
    /// to uniform weights, `0` when the constraint is slack.
    pub lambda: f64,
    /// Normalizer: `f'(n w_i) = (±z_i - η) / λ` on the support.
    pub eta: f64,
    /// `⟨w, z⟩` at the optimum (in the original, unnegated scores).
    pub value: f64,
}

impl BallSolution {
    /// For the modified KL generator, the temperature T = 2λ with
    /// `w ∝ exp(±z / T)`.
    pub fn kl_temperature(&self) -> f64 {
        2.0 * self.lambda
    }
}

/// Maximizer of `⟨w, c⟩ - D_f(w || uniform) / 2` over the simplex, i.e. the
/// tilted weights with `f'(n w_i) = 2(c_i - η)`:
///
/// - modified KL: `w ∝ exp(c)`,
/// - χ²: `w = proj_simplex(1/n + c/n)`,
/// - reverse KL: `n w_i = 1 / (1 + η - c_i)`.
///
/// Returns the weights and η.
pub fn tilt(kind: DivergenceKind, c: &[f64]) -> (Vec<f64>, f64) {
    match kind {
        DivergenceKind::ModifiedKl => tilt_kl(c),
        DivergenceKind::ChiSquare => {
            let order = descending_order(c);
            tilt_chi2_sorted(c, &order)
        }
        DivergenceKind::ReverseKl => tilt_reverse_kl(c),
    }
}

fn tilt_kl(c: &[f64]) -> (Vec<f64>, f64) {
    let n = c.len() as f64;
    let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = c.iter().map(|&ci| (ci - m).exp()).collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    // n w_i = exp(c_i - η).
    (w, m + total.ln() - n.ln())
}

/// Indices sorted by decreasing score; ties by increasing index.
fn descending_order(c: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&i, &j| c[j].total_cmp(&c[i]).then(i.cmp(&j)));
    order
}

fn tilt_chi2_sorted(c: &[f64], order: &[usize]) -> (Vec<f64>, f64) {
    // Euclidean projection of v = (1 + c) / n onto the simplex by sorted
    // thresholding: w_i = max(v_i - θ, 0).
    let n = c.len() as f64;
    let v = |i: usize| (1.0 + c[i]) / n;
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &i) in order.iter().enumerate() {
        cumsum += v(i);
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if v(i) - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut w: Vec<f64> = (0..c.len()).map(|i| (v(i) - theta).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    // n w_i = 1 + c_i - η on the support.
    (w, n * theta)
}

fn tilt_reverse_kl(c: &[f64]) -> (Vec<f64>, f64) {
    let n = c.len() as f64;
    let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // With u = 1 + η - cmax in (0, 1], Σ 1/(u + cmax - c_i) decreases from
    // ∞ to at most n; bisect log u for the value n.
    let g = |u: f64| c.iter().map(|&ci| 1.0 / (u + cmax - ci)).sum::<f64>();
    let (mut lo, mut hi) = (1e-300f64.ln(), 0.0f64);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid.exp()) > n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = hi.exp();
    let mut w: Vec<f64> = c.iter().map(|&ci| 1.0 / (u + cmax - ci)).collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    (w, u + cmax - 1.0)
}

/// Max (or min) of `⟨w, scores⟩` over `{ w : D_f(w || uniform) <= ξ / n }`.
///
/// The min direction is the max direction applied to negated scores.
pub fn ball_optimum(spec: &DivergenceSpec, scores: &[f64], xi: f64, direction: Direction) -> Result<BallSolution> {
    if scores.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if !(xi >= 0.0) || xi.is_infinite() {
        return Err(Error::invalid("xi", format!("{xi} must be finite and nonnegative")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("scores[{i}]"), "not finite"));
    }
    let z: Vec<f64> = match direction {
        Direction::Max => scores.to_vec(),
        Direction::Min => scores.iter().map(|s| -s).collect(),
    };
    let n = z.len();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
    let range = zmax - zmin;
    let finish = |w: Vec<f64>, lambda: f64, eta: f64| {
        let achieved_divergence = spec.value_unchecked(&w);
        let value = w.iter().zip(scores).map(|(w, s)| w * s).sum();
        BallSolution {
            weights: WeightVector { w, achieved_divergence },
            lambda,
            eta,
            value,
        }
    };
    let mean = z.iter().sum::<f64>() / n as f64;
    if xi == 0.0 || range == 0.0 {
        return Ok(finish(vec![1.0 / n as f64; n], f64::INFINITY, mean));
    }

    let radius = xi / n as f64;
    let argmax: Vec<usize> = (0..n).filter(|&i| z[i] == zmax).collect();
    if radius >= spec.limit_divergence(n, argmax.len()) {
        let mut w = vec![0.0; n];
        for &i in &argmax {
            w[i] = 1.0 / argmax.len() as f64;
        }
        return Ok(finish(w, 0.0, zmax));
    }

    let order = descending_order(&z);
    let weights_at = |lambda: f64| -> (Vec<f64>, f64) {
        let c: Vec<f64> = z.iter().map(|zi| zi / (2.0 * lambda)).collect();
        let (w, eta) = match spec.kind {
            DivergenceKind::ChiSquare => tilt_chi2_sorted(&c, &order),
            kind => tilt(kind, &c),
        };
        (w, 2.0 * lambda * eta)
    };
    let div_at = |lambda: f64| spec.value_unchecked(&weights_at(lambda).0);

    // D(λ) decreases in λ. Bracket the root in log λ, then bisect.
    let mut lo = (BRACKET_LO * range).ln();
    let mut hi = (BRACKET_HI * range).ln();
    while div_at(hi.exp()) > radius {
        hi += 10f64.ln();
    }
    while div_at(lo.exp()) < radius && lo > -700.0 {
        lo -= 10f64.ln();
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < REL_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if div_at(mid.exp()) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The upper end of the bracket is always feasible.
    let lambda = hi.exp();
    let (w, eta) = weights_at(lambda);
    let eta = match direction {
        Direction::Max => eta,
        Direction::Min => -eta,
    };
    Ok(finish(w, lambda, eta))
}

/// Closed-form modified-KL weights (see [`ball_optimum`]).
pub fn kl_weights(scores: &[f64], xi: f64, direction: Direction) -> Result<BallSolution> {
    ball_optimum(&DivergenceSpec::modified_kl(), scores, xi, direction)
}

/// χ² weights via sorted-threshold simplex projection (see [`ball_optimum`]).
pub fn chi2_weights(scores: &[f64], xi: f64, direction: Direction) -> Result<BallSolution> {
    ball_optimum(&DivergenceSpec::chi_square(), scores, xi, direction)
}

/// Reverse-KL weights (see [`ball_optimum`]).
pub fn reverse_kl_weights(scores: &[f64], xi: f64, direction: Direction) -> Result<BallSolution> {
    ball_optimum(&DivergenceSpec::reverse_kl(), scores, xi, direction)
}

pub use crate::special::chi2_quantile_1dof;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_normalized() {
        for kind in [DivergenceKind::ModifiedKl, DivergenceKind::ChiSquare, DivergenceKind::ReverseKl] {
            let spec = DivergenceSpec::new(kind).unwrap();
            assert_eq!(spec.f(1.0), 0.0);
            assert!(spec.f_prime(1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conjugates_match_numeric_sup() {
        for kind in [DivergenceKind::ModifiedKl, DivergenceKind::ChiSquare, DivergenceKind::ReverseKl] {
            let spec = DivergenceSpec::new(kind).unwrap();
            for y in [-3.0, -0.5, 0.0, 0.7, 1.5] {
                let sup = (0..200_000)
                    .map(|i| i as f64 * 1e-4)
                    .map(|x| x * y - spec.f(x))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((sup - spec.conjugate(y)).abs() < 1e-5, "{kind:?} y={y}");
            }
        }
    }

    #[test]
    fn hand_values() {
        let kl = DivergenceSpec::modified_kl();
        let chi = DivergenceSpec::chi_square();
        assert!((divergence_value(&kl, &[1.0, 0.0]).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((divergence_value(&chi, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(divergence_value(&kl, &[0.25; 4]).unwrap(), 0.0);
        assert!(divergence_value(&chi, &[1.5, -0.5]).is_err());
    }

    #[test]
    fn degenerate_inputs_give_uniform() {
        let sol = kl_weights(&[2.0; 5], 3.0, Direction::Max).unwrap();
        assert_eq!(sol.weights.w, vec![0.2; 5]);
        assert_eq!(sol.weights.achieved_divergence, 0.0);
        let sol = chi2_weights(&[0.0, 1.0, 5.0], 0.0, Direction::Min).unwrap();
        assert_eq!(sol.weights.w, vec![1.0 / 3.0; 3]);
        assert!(kl_weights(&[0.0, 1.0], -1.0, Direction::Max).is_err());
        assert!(kl_weights(&[0.0, f64::NAN], 1.0, Direction::Max).is_err());
    }

    #[test]
    fn slack_ball_puts_mass_on_argmax_set() {
        // n = 4, two tied maxima: the limit has χ² divergence (4-2)/2 = 1,
        // so any radius >= 1 (ξ >= 4) is slack.
        let sol = chi2_weights(&[0.0, 1.0, 1.0, 0.5], 4.0, Direction::Max).unwrap();
        assert_eq!(sol.weights.w, vec![0.0, 0.5, 0.5, 0.0]);
        assert_eq!(sol.value, 1.0);
    }

    #[test]
    fn constraint_is_active() {
        let z = [0.3, -1.0, 2.0, 0.0, 0.9];
        for kind in [DivergenceKind::ModifiedKl, DivergenceKind::ChiSquare, DivergenceKind::ReverseKl] {
            let spec = DivergenceSpec::new(kind).unwrap();
            let sol = ball_optimum(&spec, &z, 0.5, Direction::Max).unwrap();
            assert!((sol.weights.achieved_divergence - 0.1).abs() < 1e-7, "{kind:?}");
            assert!((sol.weights.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_weights_are_exponential_tilts() {
        let z = [0.1, 0.4, -0.2];
        let sol = kl_weights(&z, 1.0, Direction::Max).unwrap();
        let t = sol.kl_temperature();
        let unnorm: Vec<f64> = z.iter().map(|zi| (zi / t).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        for (w, u) in sol.weights.w.iter().zip(&unnorm) {
            assert!((w - u / total).abs() < 1e-14);
        }
    }

    #[test]
    fn negation_duality_is_exact() {
        let z = [0.3, -1.0, 2.0, 0.0, 0.9];
        let neg: Vec<f64> = z.iter().map(|x| -x).collect();
        let a = chi2_weights(&z, 1.2, Direction::Min).unwrap();
        let b = chi2_weights(&neg, 1.2, Direction::Max).unwrap();
        assert_eq!(a.weights.w, b.weights.w);
    }
}
