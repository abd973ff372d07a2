#![allow(dead_code)]

use hcope_core::envs::{DatasetHeader, Transition};
use hcope_core::mdp::{TabularMdp, TabularPolicy};

/// Normalized policy value by iterating the Bellman operator to a fixed point.
pub fn value_iteration(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = vec![0.0; ns * na];
    loop {
        let v: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| pi.prob(s, a) * q[s * na + a]).sum())
            .collect();
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.next_state_probs(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                next[s * na + a] = mdp.reward_mean(s, a) + g * ev;
            }
        }
        let diff = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if diff < 1e-13 {
            return q;
        }
    }
}

pub fn normalized_value(mdp: &TabularMdp, pi: &TabularPolicy) -> f64 {
    let q = value_iteration(mdp, pi);
    let na = mdp.n_actions();
    let mut total = 0.0;
    for (s, m) in mdp.mu0().iter().enumerate() {
        for a in 0..na {
            total += m * pi.prob(s, a) * q[s * na + a];
        }
    }
    (1.0 - mdp.gamma()) * total
}

pub fn header(n_states: usize, n_actions: usize, gamma: f64, r_max: f64, n_traj: usize, horizon: usize) -> DatasetHeader {
    DatasetHeader {
        seed: 0,
        n_trajectories: n_traj,
        horizon,
        behavior_tag: "manual".into(),
        n_states,
        n_actions,
        gamma,
        r_max,
    }
}

/// Tuple of a one-state, one-action chain.
pub fn single_cell(r: f64, traj_id: usize) -> Transition {
    Transition {
        s0: 0,
        a0: 0,
        s: 0,
        a: 0,
        r,
        sp: 0,
        ap: 0,
        traj_id,
    }
}
