mod common;

use proptest::prelude::*;
use rand::Rng;
use rcmdp::lyapunov::{
    check_candidate, descent_violations, invariance_test, shape_model, stability_constrained_model,
    InvarianceOptions, LyapunovFn,
};
use rcmdp::policy::{episode_rng, sample_trajectory};
use rcmdp::robust_dp::{robust_policy_evaluation, robust_return};
use rcmdp::{Horizon, PolicyTable, Rcmdp, Signal, SoftmaxPolicy};

fn candidate<R: Rng>(rng: &mut R, n: usize) -> LyapunovFn {
    let eq = rng.gen_range(0..n);
    LyapunovFn::new((0..n).map(|s| if s == eq { 0.0 } else { rng.gen_range(0.1..5.0) }).collect(), eq)
}

fn bits(x: &[Vec<Vec<f64>>]) -> Vec<u64> {
    x.iter().flatten().flatten().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shaping_touches_only_rewards(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let m = common::random_model(&mut rng, 4, 3, &[0.0, 0.5, 2.0], 0.9, Horizon::Infinite);
        let v = candidate(&mut rng, 4);
        prop_assert!(check_candidate(&v).passed());
        let shaped = shape_model(&m, &v).unwrap();
        prop_assert_eq!(bits(&shaped.nominal), bits(&m.nominal));
        prop_assert_eq!(bits(&shaped.constraint_rewards), bits(&m.constraint_rewards));
        prop_assert_eq!(&shaped.budgets, &m.budgets);
        for s in 0..4 {
            for a in 0..3 {
                for t in 0..4 {
                    let f = v.values[s] - v.values[t];
                    prop_assert_eq!(shaped.rewards[s][a][t], m.rewards[s][a][t] + f);
                }
            }
        }
    }

    #[test]
    fn stability_channel_telescopes(seed in any::<u64>(), horizon in 0usize..6) {
        let mut rng = common::rng(seed);
        let m = common::random_model(&mut rng, 3, 2, &[0.0], 1.0, Horizon::Finite(horizon));
        let v = candidate(&mut rng, 3);
        let sc = stability_constrained_model(&m, &v, 0.0).unwrap();
        let pi = PolicyTable::new((0..3).map(|_| common::random_simplex(&mut rng, 2)).collect()).unwrap();
        let u = robust_policy_evaluation(&sc, &pi, Signal::Constraint).unwrap();
        let lhs = robust_return(&sc, &u).unwrap();

        // propagate the state distribution forward for T steps
        let mut dist = m.p0.clone();
        for _ in 0..horizon {
            let mut next = vec![0.0; 3];
            for s in 0..3 {
                for a in 0..2 {
                    for t in 0..3 {
                        next[t] += dist[s] * pi.probs[s][a] * m.nominal[s][a][t];
                    }
                }
            }
            dist = next;
        }
        let dot = |d: &[f64]| d.iter().zip(&v.values).map(|(p, x)| p * x).sum::<f64>();
        let rhs = dot(&m.p0) - dot(&dist);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * 10.0, "{lhs} vs {rhs}");
    }
}

#[test]
fn random_instances_keep_optimal_policies() {
    for seed in 0..10 {
        let mut rng = common::rng(300 + seed);
        let m = common::random_model(&mut rng, 3, 2, &[0.5], 1.0, Horizon::Finite(3));
        let v = candidate(&mut rng, 3);
        let report = invariance_test(&m, &v, &InvarianceOptions::new(3)).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(!report.optimal_original.is_empty());
    }
}

#[test]
fn budget_guard_rejects_large_enumerations() {
    let mut rng = common::rng(1);
    let m = common::random_model(&mut rng, 4, 3, &[0.0], 1.0, Horizon::Finite(4));
    let v = candidate(&mut rng, 4);
    let mut opts = InvarianceOptions::new(6);
    opts.policy_budget = 1000;
    assert!(invariance_test(&m, &v, &opts).is_err());
}

/// Deterministic corridor driven right by a near-deterministic policy
/// never climbs the distance-to-goal candidate.
#[test]
fn descending_rollouts_have_no_violations() {
    let mut m: Rcmdp = common::corridor(0.0, 0.9);
    for s in 0..3 {
        m.nominal[s][0] = vec![0.0; 4];
        m.nominal[s][0][s + 1] = 1.0;
    }
    let v = LyapunovFn::new(vec![3.0, 2.0, 1.0, 0.0], 3);
    let policy = SoftmaxPolicy::from_logits(4, 2, vec![40.0, -40.0, 40.0, -40.0, 40.0, -40.0, 0.0, 0.0]).unwrap();
    for seed in 0..10 {
        let xi = sample_trajectory(&m, &policy, &[0.0; 4], 20, &mut episode_rng(seed, 0)).unwrap();
        assert_eq!(descent_violations(&xi, &v), 0);
        assert_eq!(xi.steps.last().unwrap().s_next, 3);
    }
}
