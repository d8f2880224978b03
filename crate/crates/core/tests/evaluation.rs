mod common;

use common::pole_placement_gains;
use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;
use rand::Rng;
use robust_mobo::evaluation::*;
use robust_mobo::seed;
use robust_mobo::sim::{PerturbationConfig, Trajectory};
use robust_mobo::{ControllerGains, SimState};

fn ceil_log2(m: usize) -> usize {
    (m as f64).log2().ceil() as usize
}

#[test]
fn reward_matches_matrix_quadratic_form() {
    let w = RewardWeights::default();
    let q = Matrix4::from_diagonal(&Vector4::new(1.0, 10.0, 0.0, 0.0));
    let mut rng = seed::rng(1);
    for _ in 0..1000 {
        let x = Vector4::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let u: f64 = rng.random_range(-10.0..10.0);
        let oracle = -((x.transpose() * q * x)[(0, 0)] + 8.0 * u * u);
        let got = reward(&SimState::new(x[0], x[1], x[2], x[3]), u, &w);
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }
    assert_eq!(reward(&SimState::UPRIGHT, 1.0, &w), -8.0);
}

#[test]
fn episode_return_matches_independent_sum() {
    let mut rng = seed::rng(2);
    let w = RewardWeights::default();
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let states: Vec<SimState> = (0..n)
            .map(|_| {
                SimState::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random(),
                    rng.random(),
                )
            })
            .collect();
        let volts: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut oracle = 0.0;
        for k in 0..n {
            let s = &states[k];
            oracle += -(s.alpha * s.alpha + 10.0 * s.beta * s.beta + 8.0 * volts[k] * volts[k]);
        }
        oracle /= n as f64;
        let traj = Trajectory {
            times: (0..n).map(|k| k as f64 * 0.002).collect(),
            observations: vec![[0.0; 4]; n],
            true_states: states,
            voltages: volts,
            control_period: 0.002,
            diverged: false,
        };
        assert!((episode_return(&traj, &w).unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn scale_return_is_continuous_and_nondecreasing() {
    let n = 10_000;
    let mut prev = scale_return(-600.0);
    for i in 1..=n {
        let x = -600.0 + 650.0 * i as f64 / n as f64;
        let y = scale_return(x);
        assert!(y >= prev);
        // slope never exceeds 0.5 / 20 per unit of return
        assert!(y - prev <= 0.025 * 650.0 / n as f64 + 1e-12);
        assert!((0.0..=1.0).contains(&y));
        prev = y;
    }
    assert_eq!(scale_return(-20.0), 0.5);
    assert_eq!(scale_return(0.0), 1.0);
    assert_eq!(scale_return(-500.0), 0.0);
    assert_eq!(scale_return(-600.0), 0.0);
}

#[test]
fn performance_separates_falling_from_stabilizing_controllers() {
    let env = Environment::default();
    let zero = performance_estimate(&ControllerGains::default(), &env, 10, 5).unwrap();
    let good = performance_estimate(&pole_placement_gains(&env.physical), &env, 10, 5).unwrap();
    assert!(zero < 0.5, "{zero}");
    assert!(good > 0.5, "{good}");
    assert_eq!(
        good,
        performance_estimate(&pole_placement_gains(&env.physical), &env, 10, 5).unwrap()
    );
    assert!(performance_estimate(&ControllerGains::default(), &env, 0, 5).is_err());
}

#[test]
fn probe_examples() {
    let env = Environment::default();
    let zero = ControllerGains::default();
    let good = pole_placement_gains(&env.physical);
    for (kind, sev) in [
        (MarginKind::Delay, 0.0),
        (MarginKind::Delay, 8.0),
        (MarginKind::Gain, 1.0),
        (MarginKind::Gain, 0.5),
    ] {
        assert!(!stability_probe(&zero, sev, kind, &env, 5, 9));
    }
    let unperturbed = (0..5).all(|k| {
        let traj = env.episode(
            &good,
            &PerturbationConfig::default(),
            5.0,
            seed::derive(9, &[k]),
        );
        is_stable(&traj, &env.criterion).unwrap()
    });
    assert_eq!(
        stability_probe(&good, 0.0, MarginKind::Delay, &env, 5, 9),
        unperturbed
    );
    assert_eq!(
        stability_probe(&good, 1.0, MarginKind::Gain, &env, 5, 9),
        unperturbed
    );
    let a = stability_probe(&good, 6.0, MarginKind::Delay, &env, 5, 10);
    assert_eq!(
        a,
        stability_probe(&good, 6.0, MarginKind::Delay, &env, 5, 10)
    );
}

#[test]
fn margin_search_on_simulator_respects_probe_budget() {
    let env = Environment::default();
    let good = pole_placement_gains(&env.physical);
    for grid in [MarginGrid::default_delay(), MarginGrid::default_gain()] {
        let est = margin_binary_search(&good, &grid, &env, 5, 11);
        assert!(est.probes.len() <= ceil_log2(grid.len()) + 1);
        assert_eq!(est.trials_used, est.probes.len() * 5);
        assert!((0.0..=1.0).contains(&est.normalized));
        assert!(
            est.raw_value.is_some(),
            "oracle controller should survive the mildest {:?}",
            grid.kind
        );
    }
    let none = margin_binary_search(
        &ControllerGains::default(),
        &MarginGrid::default_delay(),
        &env,
        5,
        11,
    );
    assert_eq!((none.raw_value, none.normalized), (None, 0.0));
}

#[test]
fn margin_search_equals_exhaustive_sweep_for_every_threshold() {
    for m in 1..=10 {
        for passing in 0..=m {
            let oracle = |i: usize| i < passing;
            let exhaustive = (0..m).filter(|&i| oracle(i)).max();
            let (found, probes) = binary_search_monotone(m, oracle);
            assert_eq!(found, exhaustive, "m={m} passing={passing}");
            assert!(probes <= ceil_log2(m) + 1, "m={m} probes={probes}");
        }
    }
}

#[test]
fn eight_candidate_example() {
    let mut probes = 0;
    let (found, count) = binary_search_monotone(8, |i| {
        probes += 1;
        i <= 5
    });
    assert_eq!(found, Some(5));
    assert!(count <= 4 && probes == count);
}

#[test]
fn normalization_examples() {
    let delay = MarginGrid::default_delay();
    assert_eq!(normalize_margin(None, &delay), 0.0);
    assert_eq!(normalize_margin(Some(16.0), &delay), 1.0);
    assert_eq!(normalize_margin(Some(4.0), &delay), 0.25);
    let gain = MarginGrid::default_gain();
    let mid = gain.candidates[7];
    let k_min = gain.candidates[15];
    let oracle = (1.0 - mid) / (1.0 - k_min);
    assert!((normalize_margin(Some(mid), &gain) - oracle).abs() < 1e-15);
    assert!((k_min - 0.2).abs() < 1e-12 && (gain.candidates[0] - 0.95).abs() < 1e-12);
    assert_eq!(normalize_margin(None, &gain), 0.0);
}

proptest! {
    #[test]
    fn search_agrees_with_sweep_on_random_monotone_oracles(m in 1usize..=64, frac in 0.0..=1.0f64) {
        let passing = (frac * m as f64).round() as usize;
        let (found, probes) = binary_search_monotone(m, |i| i < passing);
        prop_assert_eq!(found, passing.checked_sub(1));
        prop_assert!(probes <= ceil_log2(m) + 1);
    }

    #[test]
    fn normalized_margins_stay_in_unit_interval(idx in 0usize..16, delay in any::<bool>()) {
        let grid = if delay { MarginGrid::default_delay() } else { MarginGrid::default_gain() };
        let v = normalize_margin(Some(grid.candidates[idx]), &grid);
        prop_assert!((0.0..=1.0).contains(&v));
        if idx > 0 {
            prop_assert!(v > normalize_margin(Some(grid.candidates[idx - 1]), &grid));
        }
    }
}
