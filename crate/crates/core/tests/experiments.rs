use gridsde::experiments::*;
use gridsde::grid::assess_stability;
use gridsde::solar::SolarMode;
use gridsde::Error;

/// σ_est 90th percentile from the noise-free (β = 0) cloudy calibration run
/// with the default config, seed 0.
const NOISE_FREE_SIGMA_P90: f64 = 1.31e-5;

fn cloudy() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.mode = SolarMode::Cloudy;
    cfg
}

#[test]
fn full_subsample_is_the_trajectory() {
    let traj = run_simulation(&ExperimentConfig::default())
        .unwrap()
        .trajectory;
    let obs = subsample_observations(&traj, traj.len(), 0.0, 4).unwrap();
    assert_eq!(obs.times, traj.times);
    assert_eq!(obs.values, traj.states);
    let a = subsample_observations(&traj, 35, 0.0, 9).unwrap();
    assert_eq!(a, subsample_observations(&traj, 35, 0.0, 9).unwrap());
    assert!(a.times.windows(2).all(|w| w[0] < w[1]));
    assert!(subsample_observations(&traj, traj.len() + 1, 0.0, 0).is_err());
}

#[test]
fn observation_noise_has_requested_spread() {
    let traj = run_simulation(&ExperimentConfig::default())
        .unwrap()
        .trajectory;
    let mut resid = Vec::new();
    for seed in 0..1000 {
        let obs = subsample_observations(&traj, 35, 0.01, seed).unwrap();
        for (r, &i) in obs.indices.iter().enumerate() {
            resid.push(obs.values[(r, 0)] - traj.states[(i, 0)]);
        }
    }
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let std = (resid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 0.01).abs() <= 0.001, "std {std}");
}

#[test]
fn dense_noise_free_observations_are_interpolated() {
    let mut cfg = ExperimentConfig::default();
    cfg.time.end = 2.0;
    cfg.observation.count = cfg.time.points().unwrap().len();
    let out = run_state_estimation(&cfg).unwrap();
    assert_eq!(out.rows.len(), KernelFamily::ALL.len());
    for row in &out.rows {
        for (state, est) in &row.states {
            let est = est.as_ref().unwrap();
            let truth = out.trajectory.column_by_label(state).unwrap();
            let resid = est
                .mean
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(resid <= 1e-4, "{} {state}: {resid:e}", row.family.slug());
        }
    }
}

#[test]
fn table_has_one_row_per_configured_kernel() {
    let cfg = ExperimentConfig {
        kernels: vec![KernelFamily::Periodic, KernelFamily::Rbf],
        ..Default::default()
    };
    let out = run_state_estimation(&cfg).unwrap();
    let fams: Vec<_> = out.rows.iter().map(|r| r.family).collect();
    assert_eq!(fams, cfg.kernels);
    assert!(out.rows.iter().all(|r| !r.failed()));
}

#[test]
fn estimation_is_deterministic() {
    let cfg = cloudy().with_seed(3);
    let a = run_state_estimation(&cfg).unwrap();
    let b = run_state_estimation(&cfg).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for s in TABLE_STATES {
            assert_eq!(ra.metrics(s), rb.metrics(s));
        }
    }
}

#[test]
fn instability_flags() {
    let out = run_instability_study(&ExperimentConfig::default()).unwrap();
    let flags: Vec<bool> = out.rows.iter().map(|r| r.report.unstable).collect();
    assert_eq!(flags, vec![false, true]);

    let mut night = ExperimentConfig::default();
    night.scenario.clock.start_hour = 21.0;
    night.scenario.clock.hours_per_second = 0.3;
    night.instability.scales = vec![0.0, 1.2];
    let out = run_instability_study(&night).unwrap();
    assert!(out.rows.iter().all(|r| !r.report.unstable));

    assert!(matches!(
        run_instability_study(&cloudy()),
        Err(Error::Config(_))
    ));
}

#[test]
fn cloudy_operation_stays_bounded() {
    for seed in 0..5 {
        let cfg = cloudy().with_seed(seed);
        let setup = Setup::new(&cfg).unwrap();
        let traj = setup.simulate(cfg.solar_seed()).unwrap();
        let report = assess_stability(&traj, &setup.machine, setup.x0.delta).unwrap();
        assert!(!report.unstable, "seed {seed}: {report:?}");
    }
}

#[test]
fn noise_free_recovery_reports_small_diffusion() {
    let mut cfg = cloudy();
    cfg.scenario.fluctuation.beta = 0.0;
    let quiet = run_sde_recovery(&cfg).unwrap().summary;
    assert!(
        quiet.sigma_est_p90 <= 5.0 * NOISE_FREE_SIGMA_P90,
        "p90 {:e}",
        quiet.sigma_est_p90
    );
    let noisy = run_sde_recovery(&cloudy()).unwrap().summary;
    assert!(noisy.sigma_est_p90 > 5.0 * NOISE_FREE_SIGMA_P90);
}

#[test]
fn ou_self_test_within_tolerance() {
    let mut cfg = ExperimentConfig::default();
    cfg.recovery.self_test = true;
    let out = run_sde_recovery(&cfg).unwrap();
    let errs = out.summary.self_test.unwrap();
    assert!(errs.f_relative_l2 <= 0.2);
    assert!(errs.sigma_relative_mae <= 0.25);
    assert!(out.fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(out.labels, vec!["x".to_string()]);
}

#[test]
fn grid_recovery_needs_cloudy_data() {
    assert!(matches!(
        run_sde_recovery(&ExperimentConfig::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn profile_shape() {
    let mut cfg = cloudy();
    cfg.scenario.scale = 1.1;
    let out = emit_profile(&cfg).unwrap();
    let setup = Setup::new(&cfg).unwrap();
    let peak = cfg.scenario.scale * setup.scenario.p_max;
    let s = &out.sunny;
    assert_eq!(s.ps[0], 0.0);
    assert_eq!(*s.ps.last().unwrap(), 0.0);
    let mid = s.t.iter().position(|&h| (h - 12.5).abs() < 1e-9).unwrap();
    assert!((s.ps[mid] - peak).abs() < 1e-12);
    for i in 0..s.len() {
        if out.cloudy.ps[i] > 0.0 {
            assert!((out.cloudy.ps[i] - s.ps[i] - out.cloudy.dp[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn config_errors() {
    assert!(matches!(
        ExperimentConfig::from_json_str(r#"{"sed": 1}"#),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_json_str(r#"{"observation": {"count": 1}}"#),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_json_str(r#"{"gp": {"folds": 40}}"#),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_json_str(r#"{"gp": {"noise_floor": -1}}"#),
        Err(Error::Config(_))
    ));
    let cfg =
        ExperimentConfig::from_json_str(r#"{"seed": 5, "scenario": {"mode": "cloudy"}}"#).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.scenario.mode, SolarMode::Cloudy);
    assert_eq!(cfg.observation.count, 35);
}

#[test]
fn relative_grid_file_resolves_against_config() {
    let dir = tempfile::tempdir().unwrap();
    let grid = gridsde::grid::GridModel::ieee14().to_json().unwrap();
    std::fs::write(dir.path().join("case.json"), grid).unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"grid_file": "case.json"}"#).unwrap();
    let cfg = ExperimentConfig::load(dir.path().join("run.json")).unwrap();
    assert_eq!(
        cfg.grid_file.as_deref(),
        Some(dir.path().join("case.json").as_path())
    );
    let a = run_simulation(&cfg).unwrap().trajectory;
    let b = run_simulation(&ExperimentConfig::default())
        .unwrap()
        .trajectory;
    assert_eq!(a, b);
}
