//! Finite MDPs, stochastic policies and exact oracles.
//!
//! State-action pairs are flattened as `cell = s * n_actions + a`; every
//! table in this module (Q, occupancy, reward means) uses that order.
//! Discounted quantities come from one dense LU solve over the cells.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::sample_categorical;
use crate::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Bounded reward law attached to one state-action cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardLaw {
    PointMass { value: f64 },
    /// `offset + scale * B` with `B ~ Bernoulli(p)`.
    ScaledBernoulli { offset: f64, scale: f64, p: f64 },
}

impl RewardLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            RewardLaw::PointMass { value } => value,
            RewardLaw::ScaledBernoulli { offset, scale, p } => offset + scale * p,
        }
    }

    /// Smallest and largest value the law can produce.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            RewardLaw::PointMass { value } => (value, value),
            RewardLaw::ScaledBernoulli { offset, scale, .. } => {
                (offset.min(offset + scale), offset.max(offset + scale))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RewardLaw::PointMass { value } => value,
            RewardLaw::ScaledBernoulli { offset, scale, p } => {
                let u: f64 = rng.gen();
                if u < p {
                    offset + scale
                } else {
                    offset
                }
            }
        }
    }

    fn validate(&self, r_max: f64) -> std::result::Result<(), String> {
        if let RewardLaw::ScaledBernoulli { p, .. } = *self {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("Bernoulli probability {p} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.support();
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > r_max {
            return Err(format!("support [{lo}, {hi}] not inside [0, {r_max}]"));
        }
        Ok(())
    }
}

/// A finite MDP with bounded rewards.
///
/// `transition` is row-major over `(s, a, s')`; `rewards` is indexed by cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    rewards: Vec<RewardLaw>,
    mu0: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

#[derive(Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    rewards: Vec<RewardLaw>,
    mu0: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        TabularMdp::new(
            raw.n_states,
            raw.n_actions,
            raw.transition,
            raw.rewards,
            raw.mu0,
            raw.gamma,
            raw.r_max,
        )
    }
}

fn check_distribution(field: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid(field, "entries must be finite and nonnegative"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(field, format!("sums to {total}, expected 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        rewards: Vec<RewardLaw>,
        mu0: Vec<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("n_states/n_actions", "must be positive"));
        }
        let n_cells = n_states * n_actions;
        if transition.len() != n_cells * n_states {
            return Err(Error::invalid(
                "transition",
                format!("expected {} entries, got {}", n_cells * n_states, transition.len()),
            ));
        }
        for (cell, row) in transition.chunks_exact(n_states).enumerate() {
            check_distribution(&format!("transition[{cell}]"), row)?;
        }
        if rewards.len() != n_cells {
            return Err(Error::invalid("rewards", format!("expected {n_cells} laws, got {}", rewards.len())));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::invalid("r_max", "must be positive and finite"));
        }
        for (cell, law) in rewards.iter().enumerate() {
            law.validate(r_max).map_err(|e| Error::invalid(format!("rewards[{cell}]"), e))?;
        }
        if mu0.len() != n_states {
            return Err(Error::invalid("mu0", format!("expected {n_states} entries, got {}", mu0.len())));
        }
        check_distribution("mu0", &mu0)?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid("gamma", format!("{gamma} outside (0, 1]")));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            rewards,
            mu0,
            gamma,
            r_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_cells(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn cell(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    /// Copy of this MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut out = self.clone();
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid("gamma", format!("{gamma} outside (0, 1]")));
        }
        out.gamma = gamma;
        Ok(out)
    }

    /// Next-state distribution for `(s, a)`.
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = self.cell(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward_law(&self, s: usize, a: usize) -> &RewardLaw {
        &self.rewards[self.cell(s, a)]
    }

    pub fn reward_mean(&self, s: usize, a: usize) -> f64 {
        self.reward_law(s, a).mean()
    }

    /// Mean rewards in cell order.
    pub fn reward_means(&self) -> Vec<f64> {
        self.rewards.iter().map(RewardLaw::mean).collect()
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, rng: &mut R, s: usize, a: usize) -> f64 {
        self.reward_law(s, a).sample(rng)
    }

    pub fn sample_next_state<R: Rng + ?Sized>(&self, rng: &mut R, s: usize, a: usize) -> usize {
        sample_categorical(rng, self.next_state_probs(s, a))
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, &self.mu0)
    }

    /// Cell-to-cell transition matrix under `policy`:
    /// `P[(s,a), (s',a')] = T(s'|s,a) π(a'|s')`.
    pub fn policy_transition(&self, policy: &TabularPolicy) -> DMatrix<f64> {
        let n = self.n_cells();
        let mut p = DMatrix::zeros(n, n);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let i = self.cell(s, a);
                for (sp, &t) in self.next_state_probs(s, a).iter().enumerate() {
                    if t == 0.0 {
                        continue;
                    }
                    for ap in 0..self.n_actions {
                        p[(i, self.cell(sp, ap))] += t * policy.prob(sp, ap);
                    }
                }
            }
        }
        p
    }

    /// Initial state-action distribution μ0(s)π(a|s) in cell order.
    pub fn initial_cell_distribution(&self, policy: &TabularPolicy) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cells()];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out[self.cell(s, a)] = self.mu0[s] * policy.prob(s, a);
            }
        }
        out
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::invalid(
                "policy",
                format!(
                    "shape {}x{} does not match MDP {}x{}",
                    policy.n_states(),
                    policy.n_actions(),
                    self.n_states,
                    self.n_actions
                ),
            ));
        }
        Ok(())
    }

    fn check_discounted(&self) -> Result<()> {
        if self.gamma >= 1.0 {
            return Err(Error::Singular(
                "I - γP is singular at gamma = 1; use the undiscounted mode \
                 (mdp::average_reward or coindice::solve_bounds_undiscounted)"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// A stochastic policy: one action distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawPolicy {
    probs: Vec<Vec<f64>>,
}

impl TryFrom<RawPolicy> for TabularPolicy {
    type Error = Error;

    fn try_from(raw: RawPolicy) -> Result<Self> {
        TabularPolicy::new(raw.probs)
    }
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || n_actions == 0 {
            return Err(Error::invalid("probs", "policy needs at least one state and one action"));
        }
        for (s, row) in probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::invalid(format!("probs[{s}]"), "rows must have equal length"));
            }
            check_distribution(&format!("probs[{s}]"), row)?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Vec::with_capacity(actions.len());
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("actions[{s}]"), format!("{a} >= {n_actions}")));
            }
            let mut row = vec![0.0; n_actions];
            row[a] = 1.0;
            probs.push(row);
        }
        Self::new(probs)
    }

    /// `(1 - noise) * self + noise * uniform`.
    pub fn mix_uniform(&self, noise: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::invalid("noise", format!("{noise} outside [0, 1]")));
        }
        let u = 1.0 / self.n_actions() as f64;
        let probs = self
            .probs
            .iter()
            .map(|row| row.iter().map(|p| (1.0 - noise) * p + noise * u).collect())
            .collect();
        Ok(Self { probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, s: usize) -> usize {
        sample_categorical(rng, &self.probs[s])
    }
}

/// Normalized discounted state-action visitation of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    /// Cell-ordered masses.
    pub d: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.n_actions + a]
    }

    pub fn total(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn expected_reward(&self, mdp: &TabularMdp) -> f64 {
        self.d.iter().zip(mdp.reward_means()).map(|(d, r)| d * r).sum()
    }
}

fn lu_solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.lu()
        .solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Q^π in cell order: the solution of `(I - γP_π) Q = r̄`.
pub fn exact_q_function(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    mdp.check_discounted()?;
    let n = mdp.n_cells();
    let a = DMatrix::identity(n, n) - mdp.policy_transition(policy) * mdp.gamma;
    let r = DVector::from_vec(mdp.reward_means());
    Ok(lu_solve(a, r, "Bellman system")?.as_slice().to_vec())
}

/// Normalized value `(1 - γ) E_{s0~μ0, a0~π}[Q^π(s0, a0)]`.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let q = exact_q_function(mdp, policy)?;
    let start = mdp.initial_cell_distribution(policy);
    Ok((1.0 - mdp.gamma) * start.iter().zip(&q).map(|(p, q)| p * q).sum::<f64>())
}

/// Discounted occupancy: the solution of `(I - γP_πᵀ) d = (1 - γ) μ0π`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    mdp.check_discounted()?;
    let n = mdp.n_cells();
    let a = DMatrix::identity(n, n) - mdp.policy_transition(policy).transpose() * mdp.gamma;
    let b = DVector::from_vec(mdp.initial_cell_distribution(policy)) * (1.0 - mdp.gamma);
    let d = lu_solve(a, b, "flow system")?;
    Ok(OccupancyMeasure {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        d: d.as_slice().to_vec(),
    })
}

/// Stationary state-action distribution of the chain induced by `policy`,
/// ignoring the discount. Fails when the chain has no unique stationary law.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    let n = mdp.n_cells();
    let mut a = DMatrix::identity(n, n) - mdp.policy_transition(policy).transpose();
    // Replace one (redundant) balance equation by the normalization.
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let d = lu_solve(a, b, "stationary balance equations (chain not unichain?)")?;
    Ok(OccupancyMeasure {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        d: d.iter().map(|x| x.max(0.0)).collect(),
    })
}

/// Long-run average reward of `policy` (the γ = 1 policy value).
pub fn average_reward(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    Ok(stationary_distribution(mdp, policy)?.expected_reward(mdp))
}

/// Optimal deterministic policy by policy iteration. Ties go to the
/// lowest action index.
pub fn optimal_policy(mdp: &TabularMdp) -> Result<TabularPolicy> {
    mdp.check_discounted()?;
    let n_a = mdp.n_actions;
    let means = mdp.reward_means();
    let mut actions: Vec<usize> = (0..mdp.n_states)
        .map(|s| argmax_first(&means[s * n_a..(s + 1) * n_a], 0.0))
        .collect();
    for _ in 0..10_000 {
        let policy = TabularPolicy::deterministic(&actions, n_a)?;
        let q = exact_q_function(mdp, &policy)?;
        let mut changed = false;
        for (s, current) in actions.iter_mut().enumerate() {
            let row = &q[s * n_a..(s + 1) * n_a];
            let best = argmax_first(row, 0.0);
            // Switch only on a strict improvement to rule out cycling on ties.
            if row[best] > row[*current] + 1e-12 * (1.0 + row[*current].abs()) {
                *current = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(policy);
        }
    }
    Err(Error::Diverged {
        bound: "optimal policy".into(),
        reason: "policy iteration did not stabilize".into(),
    })
}

fn argmax_first(values: &[f64], tol: f64) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] + tol {
            best = i;
        }
    }
    best
}

/// Seeded random MDP with Bernoulli rewards and dense transitions; used
/// as a fixture by tests and benchmarks.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    let mut rng = crate::rng::seeded(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(&mut rng, n_states));
    }
    let rewards = (0..n_states * n_actions)
        .map(|_| RewardLaw::ScaledBernoulli {
            offset: 0.0,
            scale: 1.0,
            p: rng.gen(),
        })
        .collect();
    let mu0 = random_simplex(&mut rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, rewards, mu0, gamma, 1.0)
}

/// Seeded random stochastic policy with full support.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> TabularPolicy {
    let mut rng = crate::rng::seeded(seed);
    TabularPolicy {
        probs: (0..n_states).map(|_| random_simplex(&mut rng, n_actions)).collect(),
    }
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // Uniform on the simplex via normalized exponentials, kept away from 0.
    let raw: Vec<f64> = (0..n).map(|_| 0.05 - (1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let drift: f64 = 1.0 - out.iter().sum::<f64>();
    out[0] += drift;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![RewardLaw::PointMass { value: reward }], vec![1.0], gamma, 1.0)
            .unwrap()
    }

    #[test]
    fn single_cell_values() {
        let mdp = one_cell(1.0, 0.5);
        let pi = TabularPolicy::uniform(1, 1);
        assert!((exact_policy_value(&mdp, &pi).unwrap() - 1.0).abs() < 1e-12);
        assert!((exact_q_function(&mdp, &pi).unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((exact_occupancy(&mdp, &pi).unwrap().d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_arm_bandit_value() {
        let mdp = TabularMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            vec![
                RewardLaw::ScaledBernoulli { offset: 0.0, scale: 1.0, p: 0.8 },
                RewardLaw::ScaledBernoulli { offset: 0.0, scale: 1.0, p: 0.2 },
            ],
            vec![1.0],
            0.9,
            1.0,
        )
        .unwrap();
        let pi = TabularPolicy::new(vec![vec![0.95, 0.05]]).unwrap();
        let expected = 0.95 * 0.8 + 0.05 * 0.2;
        assert!((exact_policy_value(&mdp, &pi).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic_cycle_occupancy() {
        // 0 -> 1 -> 0 with one action; μ0 = δ0, γ = 1/2.
        // d0 = 1/2 + d1/2, d1 = d0/2  =>  d0 = 2/3, d1 = 1/3.
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![RewardLaw::PointMass { value: 0.0 }; 2],
            vec![1.0, 0.0],
            0.5,
            1.0,
        )
        .unwrap();
        let d = exact_occupancy(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        assert!((d.d[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.d[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_one_is_rejected_with_pointer() {
        let mdp = one_cell(1.0, 1.0);
        let err = exact_policy_value(&mdp, &TabularPolicy::uniform(1, 1)).unwrap_err();
        assert!(err.to_string().contains("undiscounted"));
        assert!((average_reward(&mdp, &TabularPolicy::uniform(1, 1)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_is_a_bellman_fixed_point() {
        let mdp = random_mdp(4, 2, 0.9, 11).unwrap();
        let pi = random_policy(4, 2, 12);
        let q = exact_q_function(&mdp, &pi).unwrap();
        let p = mdp.policy_transition(&pi);
        let r = mdp.reward_means();
        for i in 0..mdp.n_cells() {
            let backup: f64 = r[i] + mdp.gamma() * (0..mdp.n_cells()).map(|j| p[(i, j)] * q[j]).sum::<f64>();
            assert!((backup - q[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn validation_names_fields() {
        let err = TabularMdp::new(1, 1, vec![0.5], vec![RewardLaw::PointMass { value: 0.0 }], vec![1.0], 0.5, 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("transition[0]"));
        let err = TabularMdp::new(1, 1, vec![1.0], vec![RewardLaw::PointMass { value: 2.0 }], vec![1.0], 0.5, 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("rewards[0]"));
        assert!(TabularPolicy::new(vec![vec![0.7, 0.2]]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mdp = random_mdp(3, 2, 0.95, 5).unwrap();
        let text = serde_json::to_string(&mdp).unwrap();
        let back: TabularMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mdp);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn optimal_policy_picks_better_arm() {
        let mdp = TabularMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            vec![RewardLaw::PointMass { value: 0.2 }, RewardLaw::PointMass { value: 0.7 }],
            vec![1.0],
            0.9,
            1.0,
        )
        .unwrap();
        assert_eq!(optimal_policy(&mdp).unwrap().row(0), &[0.0, 1.0]);
    }
}
