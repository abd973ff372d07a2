//! Benchmark environments and off-policy data collection.
//!
//! Gridworld layout: cell `row * width + col`, row 0 at the top. Actions are
//! 0 = left, 1 = down, 2 = right, 3 = up. Moves off the grid leave the agent
//! in place. Goal and hole cells are absorbing in the episodic sense only:
//! any action there resets the agent to a start cell, which keeps the chain
//! ergodic for infinite-horizon evaluation. The goal reward is paid on the
//! transition that enters a goal cell.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::mdp::{optimal_policy, RewardLaw, TabularMdp, TabularPolicy};
use crate::rng::seeded;
use crate::{Error, Result};

fn default_bandit_gamma() -> f64 {
    0.9
}

fn default_scale() -> f64 {
    1.0
}

/// Multi-armed Bernoulli bandit with a fixed target and behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSpec {
    pub arm_reward_probs: Vec<f64>,
    pub target_optimal_prob: f64,
    pub behavior_optimal_prob: f64,
    /// Rewards are `reward_scale * Bernoulli(p)`.
    #[serde(default = "default_scale")]
    pub reward_scale: f64,
    /// Discount of the one-state MDP; the normalized value does not depend on it.
    #[serde(default = "default_bandit_gamma")]
    pub gamma: f64,
}

impl BanditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.arm_reward_probs.len() < 2 {
            return Err(Error::invalid("arm_reward_probs", "need at least 2 arms"));
        }
        for (i, p) in self.arm_reward_probs.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(format!("arm_reward_probs[{i}]"), format!("{p} outside [0, 1]")));
            }
        }
        for (field, p) in [
            ("target_optimal_prob", self.target_optimal_prob),
            ("behavior_optimal_prob", self.behavior_optimal_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(field, format!("{p} outside [0, 1]")));
            }
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::invalid("reward_scale", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", format!("{} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// Index of the best arm (first one on ties).
    pub fn optimal_arm(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.arm_reward_probs.iter().enumerate() {
            if p > self.arm_reward_probs[best] {
                best = i;
            }
        }
        best
    }

    fn policy(&self, optimal_prob: f64) -> TabularPolicy {
        let k = self.arm_reward_probs.len();
        let rest = (1.0 - optimal_prob) / (k - 1) as f64;
        let mut row = vec![rest; k];
        row[self.optimal_arm()] = optimal_prob;
        TabularPolicy::new(vec![row]).expect("validated bandit policy")
    }
}

/// One-state MDP with one action per arm, plus (target, behavior).
pub fn bandit_to_mdp(spec: &BanditSpec) -> Result<(TabularMdp, TabularPolicy, TabularPolicy)> {
    spec.validate()?;
    let k = spec.arm_reward_probs.len();
    let rewards = spec
        .arm_reward_probs
        .iter()
        .map(|&p| RewardLaw::ScaledBernoulli {
            offset: 0.0,
            scale: spec.reward_scale,
            p,
        })
        .collect();
    let mdp = TabularMdp::new(1, k, vec![1.0; k], rewards, vec![1.0], spec.gamma, spec.reward_scale)?;
    Ok((mdp, spec.policy(spec.target_optimal_prob), spec.policy(spec.behavior_optimal_prob)))
}

fn default_start_cells() -> Vec<usize> {
    vec![0]
}

fn default_target_noise() -> f64 {
    0.05
}

fn default_behavior_noise() -> f64 {
    0.2
}

/// Slippery gridworld with goal and hole cells that reset on exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub goal_cells: Vec<usize>,
    pub hole_cells: Vec<usize>,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    /// Reset distribution is uniform over these cells.
    #[serde(default = "default_start_cells")]
    pub start_cells: Vec<usize>,
    /// Target = optimal policy mixed with this much uniform noise.
    #[serde(default = "default_target_noise")]
    pub target_noise: f64,
    /// Behavior = optimal policy mixed with this much uniform noise.
    #[serde(default = "default_behavior_noise")]
    pub behavior_noise: f64,
}

pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;

impl GridworldSpec {
    /// 4x4 FrozenLake-like layout.
    pub fn frozen_lake_4x4(slip_prob: f64, gamma: f64) -> Self {
        Self {
            width: 4,
            height: 4,
            slip_prob,
            goal_cells: vec![15],
            hole_cells: vec![5, 7, 11, 12],
            step_reward: 0.0,
            goal_reward: 1.0,
            gamma,
            start_cells: vec![0],
            target_noise: default_target_noise(),
            behavior_noise: default_behavior_noise(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("width/height", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::invalid("slip_prob", format!("{} outside [0, 1]", self.slip_prob)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{} outside (0, 1)", self.gamma)));
        }
        let n = self.n_cells();
        for (field, cells) in [
            ("goal_cells", &self.goal_cells),
            ("hole_cells", &self.hole_cells),
            ("start_cells", &self.start_cells),
        ] {
            if let Some(c) = cells.iter().find(|&&c| c >= n) {
                return Err(Error::invalid(field, format!("cell {c} outside the {n}-cell grid")));
            }
        }
        if let Some(c) = self.goal_cells.iter().find(|c| self.hole_cells.contains(c)) {
            return Err(Error::invalid("goal_cells", format!("cell {c} is also a hole")));
        }
        if self.start_cells.is_empty() {
            return Err(Error::invalid("start_cells", "must not be empty"));
        }
        if let Some(c) = self.start_cells.iter().find(|c| self.is_terminal(**c)) {
            return Err(Error::invalid("start_cells", format!("cell {c} is a goal or hole")));
        }
        if !(self.step_reward >= 0.0 && self.goal_reward >= 0.0 && self.step_reward + self.goal_reward > 0.0) {
            return Err(Error::invalid(
                "step_reward/goal_reward",
                "must be nonnegative with a positive sum",
            ));
        }
        for (field, p) in [("target_noise", self.target_noise), ("behavior_noise", self.behavior_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(field, format!("{p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn is_terminal(&self, cell: usize) -> bool {
        self.goal_cells.contains(&cell) || self.hole_cells.contains(&cell)
    }

    fn step(&self, cell: usize, action: usize) -> usize {
        let (row, col) = (cell / self.width, cell % self.width);
        match action {
            LEFT if col > 0 => cell - 1,
            RIGHT if col + 1 < self.width => cell + 1,
            UP if row > 0 => cell - self.width,
            DOWN if row + 1 < self.height => cell + self.width,
            _ => cell,
        }
    }

    fn reset_distribution(&self) -> Vec<f64> {
        let mut mu0 = vec![0.0; self.n_cells()];
        let share = 1.0 / self.start_cells.len() as f64;
        for &c in &self.start_cells {
            mu0[c] += share;
        }
        mu0
    }
}

/// Builds the gridworld MDP. The second element lists non-fatal warnings
/// (e.g. a goal that cannot be reached from the start cells).
pub fn gridworld_to_mdp(spec: &GridworldSpec) -> Result<(TabularMdp, Vec<String>)> {
    spec.validate()?;
    let n = spec.n_cells();
    let mu0 = spec.reset_distribution();
    let mut transition = Vec::with_capacity(n * 4 * n);
    let mut rewards = Vec::with_capacity(n * 4);
    for cell in 0..n {
        for action in 0..4 {
            let mut row = vec![0.0; n];
            if spec.is_terminal(cell) {
                row.copy_from_slice(&mu0);
            } else {
                let lateral = if action == LEFT || action == RIGHT { [UP, DOWN] } else { [LEFT, RIGHT] };
                row[spec.step(cell, action)] += 1.0 - spec.slip_prob;
                for side in lateral {
                    row[spec.step(cell, side)] += 0.5 * spec.slip_prob;
                }
            }
            let p_goal: f64 = spec.goal_cells.iter().map(|&g| row[g]).sum::<f64>().min(1.0);
            rewards.push(RewardLaw::ScaledBernoulli {
                offset: spec.step_reward,
                scale: spec.goal_reward,
                p: p_goal,
            });
            transition.extend(row);
        }
    }
    let r_max = spec.step_reward + spec.goal_reward;
    let mdp = TabularMdp::new(n, 4, transition, rewards, mu0, spec.gamma, r_max)?;

    let mut warnings = Vec::new();
    if !goal_reachable(spec, &mdp) {
        let msg = "no goal cell is reachable from the start cells".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok((mdp, warnings))
}

fn goal_reachable(spec: &GridworldSpec, mdp: &TabularMdp) -> bool {
    let mut seen = vec![false; spec.n_cells()];
    let mut queue: VecDeque<usize> = spec.start_cells.iter().copied().collect();
    while let Some(s) = queue.pop_front() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        if spec.goal_cells.contains(&s) {
            return true;
        }
        for a in 0..4 {
            for (sp, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                if p > 0.0 && !seen[sp] {
                    queue.push_back(sp);
                }
            }
        }
    }
    false
}

/// Target and behavior policies: the optimal policy mixed with the
/// configured amounts of uniform noise.
pub fn gridworld_policies(spec: &GridworldSpec, mdp: &TabularMdp) -> Result<(TabularPolicy, TabularPolicy)> {
    let optimal = optimal_policy(mdp)?;
    Ok((optimal.mix_uniform(spec.target_noise)?, optimal.mix_uniform(spec.behavior_noise)?))
}

/// Either benchmark, as read from a JSON config (`"kind": "bandit" | "gridworld"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Bandit(BanditSpec),
    Gridworld(GridworldSpec),
}

/// A fully built benchmark.
#[derive(Debug, Clone)]
pub struct Environment {
    pub mdp: TabularMdp,
    pub target: TabularPolicy,
    pub behavior: TabularPolicy,
    pub warnings: Vec<String>,
}

impl EnvironmentSpec {
    pub fn build(&self) -> Result<Environment> {
        match self {
            EnvironmentSpec::Bandit(spec) => {
                let (mdp, target, behavior) = bandit_to_mdp(spec)?;
                Ok(Environment {
                    mdp,
                    target,
                    behavior,
                    warnings: Vec::new(),
                })
            }
            EnvironmentSpec::Gridworld(spec) => {
                let (mdp, warnings) = gridworld_to_mdp(spec)?;
                let (target, behavior) = gridworld_policies(spec, &mdp)?;
                Ok(Environment {
                    mdp,
                    target,
                    behavior,
                    warnings,
                })
            }
        }
    }

    pub fn is_bandit(&self) -> bool {
        matches!(self, EnvironmentSpec::Bandit(_))
    }

    pub fn tag(&self) -> &'static str {
        match self {
            EnvironmentSpec::Bandit(_) => "bandit",
            EnvironmentSpec::Gridworld(_) => "gridworld",
        }
    }
}

/// One augmented transition `(s0, a0, s, a, r, s', a')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s0: usize,
    pub a0: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub sp: usize,
    pub ap: usize,
    pub traj_id: usize,
}

/// Metadata line of the JSON-lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub seed: u64,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub behavior_tag: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub r_max: f64,
}

/// Logged experience, augmented with target-policy draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub tuples: Vec<Transition>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, tuples: Vec<Transition>) -> Result<Self> {
        let ds = Self { header, tuples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.header.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.header.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.header.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.header.r_max
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.n_states == 0 || h.n_actions == 0 {
            return Err(Error::invalid("n_states/n_actions", "must be positive"));
        }
        if !(h.r_max.is_finite() && h.r_max > 0.0) {
            return Err(Error::invalid("r_max", "must be positive"));
        }
        if !(h.gamma > 0.0 && h.gamma <= 1.0) {
            return Err(Error::invalid("gamma", format!("{} outside (0, 1]", h.gamma)));
        }
        for (i, t) in self.tuples.iter().enumerate() {
            let states_ok = t.s0 < h.n_states && t.s < h.n_states && t.sp < h.n_states;
            let actions_ok = t.a0 < h.n_actions && t.a < h.n_actions && t.ap < h.n_actions;
            if !(states_ok && actions_ok) {
                return Err(Error::invalid(format!("tuples[{i}]"), "state or action id out of range"));
            }
            if !(t.r >= 0.0 && t.r <= h.r_max) {
                return Err(Error::invalid(format!("tuples[{i}].r"), format!("{} outside [0, {}]", t.r, h.r_max)));
            }
        }
        Ok(())
    }

    /// Copy of this dataset with every reward replaced by `f(tuple)`.
    pub fn map_rewards(&self, f: impl Fn(&Transition) -> f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tuples {
            t.r = f(t);
        }
        out
    }

    /// Tuples grouped by trajectory id, in logged order.
    pub fn trajectories(&self) -> Vec<Vec<Transition>> {
        let mut out: Vec<Vec<Transition>> = Vec::new();
        for t in &self.tuples {
            if out.len() <= t.traj_id {
                out.resize_with(t.traj_id + 1, Vec::new);
            }
            out[t.traj_id].push(*t);
        }
        out.retain(|traj| !traj.is_empty());
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for t in &self.tuples {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::invalid("dataset", "empty input, expected a header line"))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut tuples = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            tuples.push(serde_json::from_str(&line)?);
        }
        Self::new(header, tuples)
    }
}

/// Rolls out `n_trajectories` behavior trajectories of `horizon` steps,
/// each starting from μ0, and augments every step with `s0 ~ μ0`,
/// `a0 ~ target(s0)` and `a' ~ target(s')`.
///
/// Per step the generator is consumed in the order a, r, s', s0, a0, a'.
pub fn collect_dataset(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    for (field, p) in [("behavior", behavior), ("target", target)] {
        if p.n_states() != mdp.n_states() || p.n_actions() != mdp.n_actions() {
            return Err(Error::invalid(field, "policy shape does not match the MDP"));
        }
    }
    let mut rng = seeded(seed);
    let mut tuples = Vec::with_capacity(n_trajectories * horizon);
    for traj_id in 0..n_trajectories {
        let mut s = mdp.sample_initial_state(&mut rng);
        for _ in 0..horizon {
            let a = behavior.sample(&mut rng, s);
            let r = mdp.sample_reward(&mut rng, s, a);
            let sp = mdp.sample_next_state(&mut rng, s, a);
            let s0 = mdp.sample_initial_state(&mut rng);
            let a0 = target.sample(&mut rng, s0);
            let ap = target.sample(&mut rng, sp);
            tuples.push(Transition {
                s0,
                a0,
                s,
                a,
                r,
                sp,
                ap,
                traj_id,
            });
            s = sp;
        }
    }
    Ok(Dataset {
        header: DatasetHeader {
            seed,
            n_trajectories,
            horizon,
            behavior_tag: "behavior".into(),
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.gamma(),
            r_max: mdp.r_max(),
        },
        tuples,
    })
}
