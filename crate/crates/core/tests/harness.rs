mod common;

use std::fs;
use std::path::Path;

use common::pole_placement_gains;
use proptest::prelude::*;
use robust_mobo::evaluation::Environment;
use robust_mobo::harness::*;
use robust_mobo::optimizer::{Mode, BEST_TRACE_FILE, FRONT_FILE, HV_TRACE_FILE, SET_FILE};
use robust_mobo::pareto::ObjectiveVector;
use robust_mobo::{ControllerGains, Error};

fn quick(mode: Mode, seed: u64, iterations: usize) -> RunConfig {
    let mut cfg = RunConfig::new(mode, seed);
    cfg.optimizer.iterations = iterations;
    cfg.optimizer.performance_episodes = 2;
    cfg.optimizer.probe_trials = 2;
    cfg.optimizer.acquisition.candidates = 256;
    cfg.optimizer.fit.restarts = 3;
    cfg.verification.trials = 2;
    cfg
}

fn write_set(dir: &Path, rows: &[(f64, f64)]) {
    let mut text = String::from("theta_1,theta_2,theta_3,theta_4,performance,robustness\n");
    for (i, (p, r)) in rows.iter().enumerate() {
        text.push_str(&format!("{i},1,2,3,{p},{r}\n"));
    }
    fs::write(dir.join(SET_FILE), text).unwrap();
}

#[test]
fn config_round_trips_through_json() {
    for mode in [Mode::RobustDelay, Mode::RobustGain, Mode::Scalar] {
        let mut cfg = RunConfig::new(mode, 12345);
        cfg.optimizer.iterations = 7;
        cfg.test.n_repeats = 3;
        let text = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn partial_config_fills_defaults() {
    let cfg = RunConfig::from_json(r#"{"mode": "robust-dm", "seed": 4, "test": {"n_repeats": 2}}"#)
        .unwrap();
    assert_eq!(cfg.test.n_repeats, 2);
    assert_eq!(cfg.test.scenarios.len(), 4);
    assert_eq!(cfg.environment, Environment::default());
}

#[test]
fn invalid_values_name_their_key() {
    let cases = [
        (r#"{"mode": "robust-xx", "seed": 1}"#, "mode"),
        (
            r#"{"mode": "scalar", "seed": 1, "test": {"n_repeats": 0}}"#,
            "test.n_repeats",
        ),
        (
            r#"{"mode": "scalar", "seed": 1, "optimizer": {"gain_grid": {"kind": "gain", "candidates": []}}}"#,
            "optimizer.gain_grid.candidates",
        ),
        (
            r#"{"mode": "scalar", "seed": 1, "training_gap": {"damping_factor": -1}}"#,
            "training_gap.damping_factor",
        ),
        (r#"{"mode": "scalar"}"#, "<root>"),
    ];
    for (text, want) in cases {
        match RunConfig::from_json(text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, want, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn select_examples() {
    let dir = tempfile::tempdir().unwrap();
    write_set(dir.path(), &[(0.2, 0.9), (0.8, 0.1)]);
    let s = select(dir.path(), SelectStrategy::Elbow).unwrap();
    assert_eq!((s.index, s.robustness), (0, Some(0.9)));

    write_set(dir.path(), &[(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]);
    assert_eq!(select(dir.path(), SelectStrategy::Elbow).unwrap().index, 1);
    let first = select(dir.path(), SelectStrategy::Index(0)).unwrap();
    assert_eq!((first.performance, first.robustness), (0.0, Some(1.0)));
    assert_eq!(first.gains, ControllerGains([0.0, 1.0, 2.0, 3.0]));
    assert!(select(dir.path(), SelectStrategy::Index(3)).is_err());

    write_set(dir.path(), &[]);
    assert!(select(dir.path(), SelectStrategy::Elbow).is_err());
}

#[test]
fn elbow_is_the_farthest_point_from_the_chord() {
    let front: Vec<ObjectiveVector> = (0..9)
        .map(|i| {
            let x = i as f64 / 8.0;
            ObjectiveVector::new(x, 1.0 - x * x * x)
        })
        .collect();
    let (a, b) = (front[0], front[8]);
    let dist = |p: &ObjectiveVector| {
        ((b.performance - a.performance) * (a.robustness - p.robustness)
            - (b.robustness - a.robustness) * (a.performance - p.performance))
            .abs()
    };
    let oracle = (0..9)
        .max_by(|&i, &j| dist(&front[i]).total_cmp(&dist(&front[j])))
        .unwrap();
    assert_eq!(elbow_index(&front), Some(oracle));
}

#[test]
fn battery_report_arithmetic() {
    let env = Environment::default();
    let battery = TestBattery {
        n_repeats: 4,
        ..TestBattery::default()
    };
    let zero = run_battery(&ControllerGains::default(), &env, &battery, 3).unwrap();
    for s in &zero.scenarios {
        assert_eq!(s.runs, 4);
        assert_eq!(s.failure_rate, s.failures as f64 / 4.0 * 100.0);
        assert_eq!(s.failures, s.fail_times.len());
        let mean = s.fail_times.iter().sum::<f64>() / s.fail_times.len() as f64;
        assert_eq!(s.mean_fail_time, mean);
    }
    assert_eq!(zero.total_failures(), 16);

    let good = run_battery(&pole_placement_gains(&env.physical), &env, &battery, 3).unwrap();
    let standard = &good.scenarios[0];
    assert_eq!(standard.failure_rate, 0.0);
    assert_eq!(standard.mean_fail_time, f64::INFINITY);

    let dir = tempfile::tempdir().unwrap();
    good.write_csv(&dir.path().join("report.csv")).unwrap();
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(text.starts_with(
        "scenario,runs,failures,mean_return,failure_rate,mean_fail_time\nstandard,4,0,"
    ));
    assert!(text.lines().nth(1).unwrap().ends_with(",0,inf"));
}

#[test]
fn default_battery_mirrors_the_four_scenarios() {
    let b = TestBattery::default();
    let names: Vec<&str> = b.scenarios.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["standard", "motor-noise", "sensor-noise", "add-2g"]);
    assert!(b.scenarios[1].perturbation.actuation_noise);
    assert!(b.scenarios[2].perturbation.sensor_noise);
    assert_eq!(b.scenarios[3].perturbation.mass_delta, 0.002);
    assert_eq!((b.n_repeats, b.failure_threshold_deg), (5, 20.0));
}

#[test]
fn scalar_training_writes_a_best_return_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(Mode::Scalar, 2, 5);
    let state = train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    let text = fs::read_to_string(dir.path().join(BEST_TRACE_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "best_return");
    assert_eq!(lines.len(), state.iteration + 1);
    assert!(lines[1..].iter().all(|l| !l.contains(',')));
    assert!(!dir.path().join(FRONT_FILE).exists());
    let chosen = select(dir.path(), SelectStrategy::Elbow).unwrap();
    assert_eq!(chosen.robustness, None);
    let summary = export_plots(dir.path(), false).unwrap();
    assert_eq!(summary.curve.len(), state.iteration);
}

#[test]
fn training_refuses_to_overwrite_and_checks_resume_config() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("nested").join("run");
    let cfg = quick(Mode::RobustDelay, 6, 1);
    train(&cfg, &out, &TrainOptions::default()).unwrap();
    assert!(matches!(
        train(&cfg, &out, &TrainOptions::default()),
        Err(Error::OutputExists(_))
    ));

    let other = quick(Mode::RobustDelay, 7, 1);
    let resume = TrainOptions {
        resume: true,
        ..TrainOptions::default()
    };
    assert!(matches!(
        train(&other, &out, &resume),
        Err(Error::Config { .. })
    ));

    let before = fs::read(out.join(FRONT_FILE)).unwrap();
    let state = train(&cfg, &out, &resume).unwrap();
    assert_eq!(state.iteration, cfg.optimizer.total_iterations());
    assert_eq!(fs::read(out.join(FRONT_FILE)).unwrap(), before);

    train(
        &cfg,
        &out,
        &TrainOptions {
            force: true,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!(fs::read(out.join(FRONT_FILE)).unwrap(), before);
}

#[test]
fn verification_flags_reach_the_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(Mode::RobustGain, 11, 3);
    train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    let rows = verify_front(dir.path(), false).unwrap();
    assert!(!rows.is_empty());
    assert!(matches!(
        verify_front(dir.path(), false),
        Err(Error::OutputExists(_))
    ));

    // mark one row as discarded and check the flag travels to the scatter data
    let mut edited = rows.clone();
    edited[0].discarded = true;
    let mut w = csv::Writer::from_path(dir.path().join(VERIFICATION_FILE)).unwrap();
    for r in &edited {
        w.serialize(r).unwrap();
    }
    w.flush().unwrap();
    let summary = export_plots(dir.path(), false).unwrap();
    let flagged = edited.iter().filter(|r| r.discarded).count();
    assert_eq!(summary.discarded, flagged);
    let scatter = fs::read_to_string(dir.path().join(PLOTS_DIR).join("front_scatter.csv")).unwrap();
    assert_eq!(
        scatter.lines().next().unwrap(),
        "performance,robustness,on_front,discarded"
    );
    assert_eq!(
        scatter
            .lines()
            .filter(|l| l.ends_with(",true,true"))
            .count(),
        flagged
    );
    assert!(matches!(
        export_plots(dir.path(), false),
        Err(Error::OutputExists(_))
    ));
    export_plots(dir.path(), true).unwrap();
}

#[test]
fn export_plots_lists_missing_files_and_checks_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    match export_plots(dir.path(), false) {
        Err(Error::MissingArtifacts(files)) => {
            assert!(files.contains(&"pareto_front.csv".to_string()))
        }
        other => panic!("{other:?}"),
    }

    let cfg = quick(Mode::RobustDelay, 1, 2);
    train(&cfg, dir.path(), &TrainOptions::default()).unwrap();
    let trace = dir.path().join(HV_TRACE_FILE);
    let text = fs::read_to_string(&trace).unwrap();
    let shorter: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    fs::write(&trace, shorter.join("\n") + "\n").unwrap();
    assert!(matches!(
        export_plots(dir.path(), false),
        Err(Error::Verification(_))
    ));

    fs::remove_file(&trace).unwrap();
    match export_plots(dir.path(), false) {
        Err(Error::MissingArtifacts(files)) => assert_eq!(files, vec![HV_TRACE_FILE.to_string()]),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_valid_config_round_trips(seed in any::<u64>(), mode in 0usize..3, n_init in 1usize..10, iters in 0usize..300, repeats in 1usize..10, mass in 0.5..1.5f64) {
        let mode = [Mode::RobustDelay, Mode::RobustGain, Mode::Scalar][mode];
        let mut cfg = RunConfig::new(mode, seed);
        cfg.optimizer.n_init = n_init;
        cfg.optimizer.iterations = iters;
        cfg.test.n_repeats = repeats;
        cfg.training_gap.pendulum_mass_factor = mass;
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn elbow_is_an_index_of_the_front(n in 1usize..12, bend in 0.2..5.0f64) {
        let front: Vec<ObjectiveVector> = (0..n)
            .map(|i| {
                let x = (i as f64 + 1.0) / (n as f64 + 1.0);
                ObjectiveVector::new(x, 1.0 - x.powf(bend))
            })
            .collect();
        let i = elbow_index(&front).unwrap();
        prop_assert!(i < n);
    }
}

#[test]
fn search_box_errors_carry_the_full_key() {
    let mut cfg = RunConfig::new(Mode::Scalar, 1);
    cfg.optimizer.search_box.lower[2] = 9.0;
    match cfg.validate() {
        Err(robust_mobo::Error::Config { key, .. }) => {
            assert_eq!(key, "optimizer.search_box.lower[2]")
        }
        other => panic!("unexpected {other:?}"),
    }
}
