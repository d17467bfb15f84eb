mod common;

use proptest::prelude::*;
use rand::Rng;
use rcmdp::envs::{generate_dataset, make_gridworld, make_inventory, GridSpec, Hazard, InventorySpec};
use rcmdp::lyapunov::check_candidate;
use rcmdp::model::{build_from_dataset, hoeffding_budget};
use rcmdp::robust_dp::robust_value_iteration;
use rcmdp::{Horizon, Rcmdp, TransitionDataset, TransitionRecord};

fn grid(width: usize, height: usize, slip: f64, hazards: Vec<Hazard>) -> GridSpec {
    GridSpec {
        width,
        height,
        start: (0, 0),
        goal: (width - 1, height - 1),
        hazards,
        slip,
        step_reward: -0.01,
        goal_reward: 1.0,
        gamma: 0.9,
        beta: 0.0,
        horizon: Horizon::Infinite,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingested_models_validate(seed in any::<u64>(), n in 1usize..20, delta in 0.01f64..0.99) {
        let mut rng = common::rng(seed);
        let s = rng.gen_range(1..=4);
        let a = rng.gen_range(1..=3);
        let truth = common::random_model(&mut rng, s, a, &[0.0], 0.9, Horizon::Infinite);
        let data = generate_dataset(&truth, n, &mut rng).unwrap();
        let m = build_from_dataset(&data, delta, 0.9, Horizon::Infinite, 0.0).unwrap();
        prop_assert!(m.validate().is_valid(), "{}", m.validate());
    }

    #[test]
    fn budget_monotone(
        n in 1u64..10_000,
        extra in 1u64..1000,
        s in 1usize..30,
        a in 1usize..10,
        delta in 0.001f64..0.5,
    ) {
        let base = hoeffding_budget(n, s, a, delta);
        prop_assert!(hoeffding_budget(n + extra, s, a, delta) <= base);
        prop_assert!(hoeffding_budget(n, s + 1, a, delta) >= base);
        prop_assert!(hoeffding_budget(n, s, a + 1, delta) >= base);
        prop_assert!(hoeffding_budget(n, s, a, delta * 0.5) >= base);
        prop_assert!(base <= 2.0);
    }

    #[test]
    fn json_round_trip_is_bit_exact(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let horizon = if rng.gen_bool(0.5) { Horizon::Infinite } else { Horizon::Finite(rng.gen_range(0..10)) };
        let gamma = if matches!(horizon, Horizon::Infinite) { rng.gen_range(0.0..0.99) } else { 1.0 };
        let m = common::random_model(&mut rng, 3, 2, &[0.0, 0.123456789, 2.0], gamma, horizon);
        let back = Rcmdp::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &m);
        let bits = |x: &Rcmdp| x.rewards.iter().flatten().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn dataset_csv_round_trip(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let truth = common::random_model(&mut rng, 2, 2, &[0.0], 0.9, Horizon::Infinite);
        let data = generate_dataset(&truth, 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = TransitionDataset::read_csv(buf.as_slice(), 2, 2).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn generated_grids_are_valid(
        w in 1usize..6,
        h in 2usize..6,
        slip in 0.0f64..0.49,
        psi in 0.0f64..2.0,
        hx in 0usize..6,
        hy in 0usize..6,
    ) {
        let hazards = vec![Hazard { cell: (hx % w, hy % h), cost: 1.0 }];
        let (m, v) = make_gridworld(&grid(w, h, slip, hazards), psi).unwrap();
        prop_assert!(m.validate().is_valid());
        prop_assert!(check_candidate(&v).passed());
        prop_assert!(m.is_terminal(v.equilibrium));
        let data = generate_dataset(&m, 1, &mut common::rng(7)).unwrap();
        prop_assert!(build_from_dataset(&data, 0.1, 0.9, Horizon::Infinite, 0.0).is_ok());
    }
}

#[test]
fn two_cell_grid_value_is_goal_reward() {
    let mut spec = grid(2, 1, 0.0, vec![]);
    spec.step_reward = 0.0;
    let (m, _) = make_gridworld(&spec, 0.0).unwrap();
    let (v, _) = robust_value_iteration(&m, None, 1e-12, 10_000).unwrap();
    assert!((v.values[0] - 1.0).abs() < 1e-12);
    assert_eq!(v.values[1], 0.0);
}

#[test]
fn empirical_kernel_converges() {
    let spec = grid(3, 3, 0.1, vec![Hazard { cell: (1, 1), cost: 1.0 }]);
    let (m, _) = make_gridworld(&spec, 0.0).unwrap();
    let n = 100_000;
    let data = generate_dataset(&m, n, &mut common::rng(11)).unwrap();
    let built = build_from_dataset(&data, 0.1, 0.9, Horizon::Infinite, 0.0).unwrap();
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let l1: f64 = built.nominal[s][a].iter().zip(&m.nominal[s][a]).map(|(x, y)| (x - y).abs()).sum();
            // 3σ per entry, summed over the row
            let bound: f64 = m.nominal[s][a].iter().map(|p| 3.0 * (p * (1.0 - p) / n as f64).sqrt()).sum();
            assert!(l1 <= 0.02 && l1 <= bound + 1e-12, "({s}, {a}): {l1} > {bound}");
        }
    }
}

#[test]
fn deterministic_kernel_recovered_exactly() {
    let (m, _) = make_gridworld(&grid(3, 2, 0.0, vec![]), 0.0).unwrap();
    let data = generate_dataset(&m, 5, &mut common::rng(1)).unwrap();
    let built = build_from_dataset(&data, 0.1, 0.9, Horizon::Infinite, 0.0).unwrap();
    assert_eq!(built.nominal, m.nominal);
    for (s, a, t) in (0..6).flat_map(|s| (0..4).flat_map(move |a| (0..6).map(move |t| (s, a, t)))) {
        let observed = m.nominal[s][a][t] > 0.0;
        let expect = |x: f64| if observed { x } else { 0.0 };
        assert_eq!(built.rewards[s][a][t], expect(m.rewards[s][a][t]));
        assert_eq!(built.constraint_rewards[s][a][t], expect(m.constraint_rewards[s][a][t]));
    }
}

#[test]
fn datasets_repeat_under_same_seed() {
    let (m, _) = make_gridworld(&grid(3, 3, 0.2, vec![]), 0.0).unwrap();
    let a = generate_dataset(&m, 4, &mut common::rng(5)).unwrap();
    let b = generate_dataset(&m, 4, &mut common::rng(5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_dataset(&m, 4, &mut common::rng(6)).unwrap());
}

#[test]
fn inventory_target_candidate() {
    let spec = InventorySpec {
        max_stock: 4,
        order_cap: 2,
        demand: vec![0.1, 0.3, 0.3, 0.2, 0.1],
        holding_cost: 0.05,
        sale_price: 1.0,
        stockout_cost: 1.0,
        target: 2,
        gamma: 0.95,
        beta: -1.0,
        initial_stock: 2,
        horizon: Horizon::Infinite,
    };
    let (m, v) = make_inventory(&spec, 0.1).unwrap();
    assert!(m.validate().is_valid());
    assert_eq!(v.values[2], 0.0);
    assert!(v.values.iter().enumerate().all(|(s, &x)| s == 2 || x > 0.0));
    assert!(check_candidate(&v).passed());
}

#[test]
fn unobserved_pair_is_reported() {
    let data = TransitionDataset::new(
        2,
        1,
        vec![TransitionRecord { s: 0, a: 0, s_next: 1, r: 0.0, d_cost: 0.0 }],
    )
    .unwrap();
    let err = build_from_dataset(&data, 0.1, 0.9, Horizon::Infinite, 0.0).unwrap_err();
    assert!(err.to_string().contains('1'), "{err}");
}
