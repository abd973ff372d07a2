mod common;

use hcope_core::baselines::*;
use hcope_core::envs::{bandit_to_mdp, collect_dataset, BanditSpec};
use hcope_core::mdp::*;
use hcope_core::rng::{seeded, standard_normal};
use proptest::prelude::*;
use rand::Rng;

fn coverage(trials: usize, truth: f64, mut interval: impl FnMut(usize) -> (f64, f64)) -> f64 {
    let hits = (0..trials)
        .filter(|&t| {
            let (lo, hi) = interval(t);
            lo <= truth && truth <= hi
        })
        .count();
    hits as f64 / trials as f64
}

#[test]
fn bernstein_is_conservative_on_uniform_samples() {
    let mut rng = seeded(1);
    let cov = coverage(500, 0.5, |_| {
        let v: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let ci = bernstein_interval(&TrajectoryEstimates::new(v, 1.0).unwrap(), 0.1, 1.0).unwrap();
        (ci.lower, ci.upper)
    });
    assert!(cov >= 0.90, "{cov}");
}

#[test]
fn t_interval_coverage_on_normal_samples() {
    let mut rng = seeded(2);
    let cov = coverage(500, 10.0, |_| {
        let v: Vec<f64> = (0..30).map(|_| 10.0 + standard_normal(&mut rng)).collect();
        let ci = t_interval(&TrajectoryEstimates::new(v, 20.0).unwrap(), 0.1).unwrap();
        (ci.lower, ci.upper)
    });
    assert!((0.86..=0.94).contains(&cov), "{cov}");
}

#[test]
fn bca_coverage_on_exponential_samples() {
    let mut rng = seeded(3);
    let cov = coverage(500, 1.0, |t| {
        let v: Vec<f64> = (0..50).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let ci = bca_bootstrap_interval(&TrajectoryEstimates::new(v, 100.0).unwrap(), 0.1, 2000, t as u64).unwrap();
        (ci.lower, ci.upper)
    });
    assert!((0.82..=0.94).contains(&cov), "{cov}");
}

#[test]
fn bernstein_shrinks_like_root_n() {
    let base: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 0.25 } else { 0.75 }).collect();
    let big: Vec<f64> = base.iter().cycle().take(40_000).copied().collect();
    let w1 = bernstein_interval(&TrajectoryEstimates::new(base, 1.0).unwrap(), 0.1, 1.0).unwrap().width();
    let w4 = bernstein_interval(&TrajectoryEstimates::new(big, 1.0).unwrap(), 0.1, 1.0).unwrap().width();
    let ratio = w1 / w4;
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
}

#[test]
fn bernstein_is_wider_than_t_on_small_samples() {
    let mut rng = seeded(4);
    for _ in 0..20 {
        let v: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * 0.5).collect();
        let e = TrajectoryEstimates::new(v, 1.0).unwrap();
        let b = bernstein_interval(&e, 0.1, 1.0).unwrap();
        let t = t_interval(&e, 0.1).unwrap();
        assert!(b.width() >= t.width());
    }
}

#[test]
fn stepwise_is_is_unbiased() {
    let gamma = 0.5;
    let mdp = random_mdp(3, 2, gamma, 61).unwrap();
    let target = random_policy(3, 2, 62);
    let behavior = target.mix_uniform(0.3).unwrap();
    let truth = exact_policy_value(&mdp, &target).unwrap();
    let ds = collect_dataset(&mdp, &behavior, &target, 10_000, 40, 63).unwrap();
    let v = stepwise_is_returns(&ds, &target, &behavior, gamma, false).unwrap();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - truth).abs() < 3.0 * se, "{mean} vs {truth} (se {se})");
}

#[test]
fn on_policy_estimates_are_discounted_returns() {
    let gamma = 0.9;
    let mdp = random_mdp(3, 2, gamma, 70).unwrap();
    let pi = random_policy(3, 2, 71);
    let ds = collect_dataset(&mdp, &pi, &pi, 5, 12, 72).unwrap();
    let est = stepwise_is_estimates(&ds, &pi, &pi, gamma, false).unwrap();
    for (traj, v) in ds.trajectories().iter().zip(&est.values) {
        let ret: f64 = traj.iter().enumerate().map(|(t, x)| gamma.powi(t as i32) * x.r).sum();
        let norm = (1.0 - gamma) / (1.0 - gamma.powi(traj.len() as i32));
        assert!((v - norm * ret).abs() < 1e-12);
    }
    let sn = stepwise_is_estimates(&ds, &pi, &pi, gamma, true).unwrap();
    assert_eq!(sn.values, est.values);
}

#[test]
fn bandit_estimates_are_ratio_times_reward() {
    let spec = BanditSpec {
        arm_reward_probs: vec![0.8, 0.2],
        target_optimal_prob: 0.95,
        behavior_optimal_prob: 0.55,
        reward_scale: 1.0,
        gamma: 0.9,
    };
    let (mdp, target, behavior) = bandit_to_mdp(&spec).unwrap();
    let ds = collect_dataset(&mdp, &behavior, &target, 50, 1, 5).unwrap();
    let raw = stepwise_is_returns(&ds, &target, &behavior, 0.9, false).unwrap();
    for (x, v) in ds.tuples.iter().zip(&raw) {
        let rho = target.prob(0, x.a) / behavior.prob(0, x.a);
        assert!((v - rho * x.r).abs() < 1e-12);
    }
    let clipped = stepwise_is_estimates(&ds, &target, &behavior, 0.9, false).unwrap();
    assert!(clipped.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(clipped.n_clipped > 0);
}

#[test]
fn zero_behavior_probability_is_an_error() {
    let mdp = random_mdp(2, 2, 0.9, 1).unwrap();
    let uniform = TabularPolicy::uniform(2, 2);
    let ds = collect_dataset(&mdp, &uniform, &uniform, 10, 5, 1).unwrap();
    let never_one = TabularPolicy::deterministic(&[0, 0], 2).unwrap();
    assert!(stepwise_is_estimates(&ds, &uniform, &never_one, 0.9, false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_interval_contains_the_mean(v in prop::collection::vec(0.0f64..1.0, 2..80), alpha in 0.01f64..0.5, seed in 0u64..100) {
        let e = TrajectoryEstimates::new(v, 1.0).unwrap();
        let m = e.mean();
        for ci in [
            bernstein_interval(&e, alpha, 1.0).unwrap(),
            t_interval(&e, alpha).unwrap(),
            bca_bootstrap_interval(&e, alpha, 1000, seed).unwrap(),
        ] {
            prop_assert!(ci.lower <= m + 1e-12 && m <= ci.upper + 1e-12, "{:?}", ci);
        }
    }
}
