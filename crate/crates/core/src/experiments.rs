//! End-to-end studies on the equivalent machine: simulation, sparse-sample
//! state estimation with a kernel roster, the solar-scale stability sweep,
//! drift/diffusion recovery and the daylight profile.
//!
//! Every random draw descends from `ExperimentConfig::seed` through
//! [`derive_seed`], so a config and a seed fix every output.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::drift::{fit_sde, DriftData, EstimatorConfig, SdeFit};
use crate::error::{Error, Result};
use crate::gp::{self, default_length_scales, CvReport};
use crate::grid::{
    assess_stability, load_grid, reduce_to_equivalent, simulate_grid, EquivalentMachine, GridModel,
    MachineState, StabilityReport,
};
use crate::kernels::{points_1d, KernelSpec};
use crate::metrics::{evaluate, MetricReport};
use crate::sde::{
    differences, euler_maruyama, ornstein_uhlenbeck, uniform_grid, Increments, Trajectory,
};
use crate::solar::{
    mean_profile, solar_path, solar_path_hours, SolarMode, SolarPath, SolarScenario,
};

pub const SOLAR_STREAM: u64 = 1;
pub const OBSERVATION_STREAM: u64 = 2;
pub const CV_STREAM: u64 = 3;
pub const OU_STREAM: u64 = 4;

/// Independent sub-seed for one consumer of randomness.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGridSpec {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for TimeGridSpec {
    fn default() -> Self {
        TimeGridSpec {
            start: 0.0,
            end: 20.0,
            step: 0.01,
        }
    }
}

impl TimeGridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(config_err("time.step must be positive"));
        }
        if !(self.start.is_finite() && self.end.is_finite() && self.end > self.start) {
            return Err(config_err("time.end must exceed time.start"));
        }
        let count = ((self.end - self.start) / self.step).round() as usize + 1;
        Ok(uniform_grid(self.start, self.step, count))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Number of sampled grid points.
    pub count: usize,
    pub noise_std: f64,
    /// Overrides the seed derived from the master seed.
    pub seed: Option<u64>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            count: 35,
            noise_std: 0.0,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Matern,
    RationalQuadratic,
    Periodic,
    Ensemble,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::Rbf,
        KernelFamily::Matern,
        KernelFamily::RationalQuadratic,
        KernelFamily::Periodic,
        KernelFamily::Ensemble,
    ];

    /// Row label in metric tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            KernelFamily::Rbf => "RBF",
            KernelFamily::Matern => "Matern",
            KernelFamily::RationalQuadratic => "Rational Quadratic",
            KernelFamily::Periodic => "Periodic",
            KernelFamily::Ensemble => "RBF + Periodic",
        }
    }

    /// File-name stem.
    pub fn slug(&self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Matern => "matern",
            KernelFamily::RationalQuadratic => "rational_quadratic",
            KernelFamily::Periodic => "periodic",
            KernelFamily::Ensemble => "ensemble",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Observation-noise variance in state units; `noise_std²` when absent.
    pub lambda_obs: Option<f64>,
    pub folds: usize,
    pub length_scales: Vec<f64>,
    pub matern_nus: Vec<f64>,
    pub rq_alphas: Vec<f64>,
    /// Periods as multiples of the observed time span.
    pub period_factors: Vec<f64>,
    /// Lower bound on the standardized noise variance, multiplied by the
    /// observation count. The floor shrinks as sampling gets denser.
    pub noise_floor: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            lambda_obs: None,
            folds: 5,
            length_scales: default_length_scales(),
            matern_nus: vec![0.5, 1.5, 2.5],
            rq_alphas: vec![0.5, 1.0, 2.0],
            period_factors: vec![2.0, 4.0, 8.0],
            noise_floor: 0.07,
        }
    }
}

impl GpConfig {
    /// Cross-validation candidates of one family over inputs spanning `span`.
    pub fn candidates(&self, family: KernelFamily, span: f64) -> Result<Vec<KernelSpec>> {
        let ls = &self.length_scales;
        let periods: Vec<f64> = self.period_factors.iter().map(|f| f * span).collect();
        let mut out = Vec::new();
        match family {
            KernelFamily::Rbf => {
                for &l in ls {
                    out.push(KernelSpec::rbf(l)?);
                }
            }
            KernelFamily::Matern => {
                for &nu in &self.matern_nus {
                    for &l in ls {
                        out.push(KernelSpec::matern(l, nu)?);
                    }
                }
            }
            KernelFamily::RationalQuadratic => {
                for &a in &self.rq_alphas {
                    for &l in ls {
                        out.push(KernelSpec::rational_quadratic(l, a)?);
                    }
                }
            }
            KernelFamily::Periodic => {
                for &p in &periods {
                    for &l in ls {
                        out.push(KernelSpec::periodic(l, p)?);
                    }
                }
            }
            KernelFamily::Ensemble => {
                for &p in &periods {
                    for &lp in ls {
                        for &l in ls {
                            out.push(KernelSpec::rbf_plus_periodic(l, lp, p)?);
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(config_err(format!(
                "empty candidate grid for {}",
                family.slug()
            )));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub estimator: EstimatorConfig,
    /// Replace grid data by a pooled Ornstein–Uhlenbeck sample.
    pub self_test: bool,
    /// Use every `stride`-th increment of the grid trajectory.
    pub stride: usize,
    pub eval_points: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            estimator: EstimatorConfig::default(),
            self_test: false,
            stride: 2,
            eval_points: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstabilityConfig {
    pub scales: Vec<f64>,
}

impl Default for InstabilityConfig {
    fn default() -> Self {
        InstabilityConfig {
            scales: vec![1.0, 1.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub step_hours: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { step_hours: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Grid description file; the shipped IEEE 14-bus case when absent.
    /// Relative paths resolve against the config file's directory.
    pub grid_file: Option<PathBuf>,
    pub scenario: SolarScenario,
    /// Sets the solar peak to this fraction of the equivalent machine's
    /// transfer limit, overriding `scenario.p_max`.
    pub solar_peak_fraction: Option<f64>,
    pub time: TimeGridSpec,
    pub observation: ObservationConfig,
    pub kernels: Vec<KernelFamily>,
    pub gp: GpConfig,
    pub recovery: RecoveryConfig,
    pub instability: InstabilityConfig,
    pub profile: ProfileConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            grid_file: None,
            scenario: SolarScenario::default(),
            solar_peak_fraction: Some(0.45),
            time: TimeGridSpec::default(),
            observation: ObservationConfig::default(),
            kernels: KernelFamily::ALL.to_vec(),
            gp: GpConfig::default(),
            recovery: RecoveryConfig::default(),
            instability: InstabilityConfig::default(),
            profile: ProfileConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and resolve `grid_file` against the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::from_json_str(&text)?;
        if let Some(grid) = &cfg.grid_file {
            if grid.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.grid_file = Some(base.join(grid));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| config_err(e.to_string());
        self.scenario.validate().map_err(wrap)?;
        let grid = self.time.points()?;
        if let Some(f) = self.solar_peak_fraction {
            if !(f.is_finite() && f > 0.0) {
                return Err(config_err("solar_peak_fraction must be positive"));
            }
        }
        let obs = &self.observation;
        if obs.count < 2 || obs.count > grid.len() {
            return Err(config_err(format!(
                "observation.count must lie in [2, {}], got {}",
                grid.len(),
                obs.count
            )));
        }
        if !(obs.noise_std.is_finite() && obs.noise_std >= 0.0) {
            return Err(config_err("observation.noise_std must be nonnegative"));
        }
        if self.kernels.is_empty() {
            return Err(config_err("kernel roster is empty"));
        }
        let gp = &self.gp;
        if gp.folds < 2 || gp.folds > obs.count {
            return Err(config_err("gp.folds must lie in [2, observation.count]"));
        }
        if let Some(l) = gp.lambda_obs {
            if !(l.is_finite() && l >= 0.0) {
                return Err(config_err("gp.lambda_obs must be nonnegative"));
            }
        }
        if !(gp.noise_floor.is_finite() && gp.noise_floor >= 0.0) {
            return Err(config_err("gp.noise_floor must be nonnegative"));
        }
        for family in &self.kernels {
            gp.candidates(*family, 1.0).map_err(wrap)?;
        }
        if gp.period_factors.is_empty() {
            return Err(config_err("gp.period_factors is empty"));
        }
        self.recovery.estimator.validate().map_err(wrap)?;
        if self.recovery.stride == 0 || self.recovery.eval_points < 2 {
            return Err(config_err(
                "recovery.stride must be positive and eval_points at least 2",
            ));
        }
        if self
            .instability
            .scales
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(config_err("instability.scales must be nonnegative"));
        }
        if !(self.profile.step_hours.is_finite() && self.profile.step_hours > 0.0) {
            return Err(config_err("profile.step_hours must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn observation_seed(&self) -> u64 {
        self.observation
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, OBSERVATION_STREAM))
    }

    pub fn solar_seed(&self) -> u64 {
        derive_seed(self.seed, SOLAR_STREAM)
    }

    pub fn cv_seed(&self) -> u64 {
        derive_seed(self.seed, CV_STREAM)
    }

    pub fn ou_seed(&self) -> u64 {
        derive_seed(self.seed, OU_STREAM)
    }
}

/// Resolved model, scenario and grid shared by every study.
#[derive(Clone, Debug)]
pub struct Setup {
    pub model: GridModel,
    pub machine: EquivalentMachine,
    pub scenario: SolarScenario,
    pub t_grid: Vec<f64>,
    pub x0: MachineState,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let model = match &cfg.grid_file {
            Some(path) => load_grid(path)?,
            None => GridModel::ieee14(),
        };
        let machine = reduce_to_equivalent(&model)?;
        let omega_s = machine.omega_s;
        let mut scenario = cfg.scenario.clone();
        if let Some(f) = cfg.solar_peak_fraction {
            scenario.p_max = f * machine.p_max;
        }
        let t_grid = cfg.time.points()?;
        let p0 = mean_profile(scenario.clock.hour(t_grid[0]), &scenario);
        let delta = machine
            .equilibrium_angle(p0)
            .ok_or_else(|| config_err("no equilibrium at the initial solar level"))?;
        Ok(Setup {
            model,
            machine,
            scenario,
            t_grid,
            x0: MachineState {
                delta,
                omega: omega_s,
            },
        })
    }

    pub fn with_scenario(&self, scenario: SolarScenario) -> Setup {
        Setup {
            scenario,
            ..self.clone()
        }
    }

    pub fn simulate(&self, seed: u64) -> Result<Trajectory> {
        simulate_grid(&self.machine, &self.scenario, &self.t_grid, seed, self.x0)
    }

    pub fn solar(&self, seed: u64) -> Result<SolarPath> {
        solar_path(&self.scenario, &self.t_grid, seed)
    }
}

/// Trajectory and injection of one run.
#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub trajectory: Trajectory,
    pub solar: SolarPath,
}

pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    let setup = Setup::new(cfg)?;
    Ok(SimulationOutput {
        trajectory: setup.simulate(cfg.solar_seed())?,
        solar: setup.solar(cfg.solar_seed())?,
    })
}

/// Sparse noisy samples of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    /// One row per sample, one column per trajectory column.
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub noise_std: f64,
    pub seed: u64,
}

impl ObservationSet {
    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let j = self.labels.iter().position(|l| l == label)?;
        Some(self.values.column(j).iter().copied().collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let traj = Trajectory::new(self.times.clone(), self.values.clone(), self.labels.clone())?;
        traj.write_csv(w)
    }
}

/// `m` grid rows drawn without replacement, sorted, plus Gaussian noise of
/// standard deviation `noise_std` on every value.
pub fn subsample_observations(
    traj: &Trajectory,
    m: usize,
    noise_std: f64,
    seed: u64,
) -> Result<ObservationSet> {
    let n = traj.len();
    if m == 0 || m > n {
        return Err(Error::arg(format!("cannot draw {m} samples from {n} rows")));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::arg("noise_std must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, n, m).into_vec();
    indices.sort_unstable();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::arg(e.to_string()))?;
    let d = traj.dim();
    let mut values = DMatrix::zeros(m, d);
    for (r, &i) in indices.iter().enumerate() {
        for j in 0..d {
            let e = if noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            values[(r, j)] = traj.states[(i, j)] + e;
        }
    }
    Ok(ObservationSet {
        times: indices.iter().map(|&i| traj.times[i]).collect(),
        indices,
        values,
        labels: traj.labels.clone(),
        noise_std,
        seed,
    })
}

/// GP estimate of one state over the full grid.
#[derive(Clone, Debug)]
pub struct StateEstimate {
    pub cv: CvReport,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub metrics: MetricReport,
    /// Noise variance used in the fit (standardized units).
    pub lambda: f64,
}

/// Regress one state on time with CV over the family's grid. Observations
/// are standardized before fitting and mapped back afterwards.
#[allow(clippy::too_many_arguments)]
pub fn estimate_state(
    family: KernelFamily,
    gp_cfg: &GpConfig,
    obs_t: &[f64],
    obs_y: &[f64],
    grid_t: &[f64],
    truth: &[f64],
    noise_std: f64,
    cv_seed: u64,
) -> Result<StateEstimate> {
    let m = obs_y.len() as f64;
    let mean = obs_y.iter().sum::<f64>() / m;
    let sd = (obs_y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let ys: Vec<f64> = obs_y.iter().map(|v| (v - mean) / scale).collect();
    let raw_lambda = gp_cfg.lambda_obs.unwrap_or(noise_std * noise_std);
    let lambda = (raw_lambda / (scale * scale)).max(gp_cfg.noise_floor / m);
    let span = obs_t.last().copied().unwrap_or(0.0) - obs_t.first().copied().unwrap_or(0.0);
    let candidates = gp_cfg.candidates(family, if span > 0.0 { span } else { 1.0 })?;
    let x = points_1d(obs_t);
    let cv = gp::cross_validate(&candidates, &x, &ys, gp_cfg.folds, cv_seed, lambda)?;
    if !cv.fold_errors[cv.chosen].is_finite() {
        return Err(Error::Numerical(
            "every candidate failed cross-validation".into(),
        ));
    }
    let post = gp::fit(cv.chosen_kernel(), &x, &ys, lambda)?;
    let xs = points_1d(grid_t);
    let mu = post.predict_mean(&xs)?;
    let var = post.predict_var(&xs)?;
    let mean_out: Vec<f64> = mu.iter().map(|v| mean + scale * v).collect();
    let var_out: Vec<f64> = var.iter().map(|v| scale * scale * v).collect();
    let metrics = evaluate(truth, &mean_out)?;
    Ok(StateEstimate {
        cv,
        mean: mean_out,
        variance: var_out,
        metrics,
        lambda,
    })
}

/// States scored in the tables, in column order.
pub const TABLE_STATES: [&str; 2] = ["omega", "delta"];

/// One roster entry; a failed state carries its error message.
#[derive(Clone, Debug)]
pub struct KernelRow {
    pub family: KernelFamily,
    pub states: Vec<(String, std::result::Result<StateEstimate, String>)>,
}

impl KernelRow {
    pub fn metrics(&self, state: &str) -> Option<&MetricReport> {
        self.states
            .iter()
            .find(|(s, _)| s == state)
            .and_then(|(_, r)| r.as_ref().ok())
            .map(|e| &e.metrics)
    }

    pub fn failed(&self) -> bool {
        self.states.iter().any(|(_, r)| r.is_err())
    }
}

#[derive(Clone, Debug)]
pub struct EstimationOutput {
    pub trajectory: Trajectory,
    pub observations: ObservationSet,
    pub rows: Vec<KernelRow>,
}

/// Simulate, subsample and fit every kernel of the roster to ω and δ.
/// A kernel that fails is recorded and the run continues.
pub fn run_state_estimation(cfg: &ExperimentConfig) -> Result<EstimationOutput> {
    let setup = Setup::new(cfg)?;
    let trajectory = setup.simulate(cfg.solar_seed())?;
    if trajectory.len() < cfg.observation.count {
        return Err(Error::Numerical(format!(
            "trajectory diverged after {} rows, fewer than the {} observations requested",
            trajectory.len(),
            cfg.observation.count
        )));
    }
    let observations = subsample_observations(
        &trajectory,
        cfg.observation.count,
        cfg.observation.noise_std,
        cfg.observation_seed(),
    )?;
    let mut rows = Vec::with_capacity(cfg.kernels.len());
    for &family in &cfg.kernels {
        let mut states = Vec::new();
        for state in TABLE_STATES {
            let truth = trajectory
                .column_by_label(state)
                .expect("grid trajectories carry both states");
            let obs = observations
                .column(state)
                .expect("observations mirror the trajectory");
            let result = estimate_state(
                family,
                &cfg.gp,
                &observations.times,
                &obs,
                &trajectory.times,
                &truth,
                cfg.observation.noise_std,
                cfg.cv_seed(),
            )
            .map_err(|e| e.to_string());
            states.push((state.to_string(), result));
        }
        rows.push(KernelRow { family, states });
    }
    Ok(EstimationOutput {
        trajectory,
        observations,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InstabilityRow {
    pub scale: f64,
    pub report: StabilityReport,
}

#[derive(Clone, Debug)]
pub struct InstabilityOutput {
    pub rows: Vec<InstabilityRow>,
    pub trajectories: Vec<Trajectory>,
}

/// Sweep the solar scale in sunny mode and flag unstable runs.
pub fn run_instability_study(cfg: &ExperimentConfig) -> Result<InstabilityOutput> {
    if cfg.scenario.mode != SolarMode::Sunny {
        return Err(config_err("the instability study runs in sunny mode"));
    }
    let setup = Setup::new(cfg)?;
    let mut rows = Vec::new();
    let mut trajectories = Vec::new();
    for &scale in &cfg.instability.scales {
        let scenario = SolarScenario {
            scale,
            ..setup.scenario.clone()
        };
        let run = setup.with_scenario(scenario);
        let traj = run.simulate(cfg.solar_seed())?;
        let report = assess_stability(&traj, &setup.machine, setup.x0.delta)?;
        rows.push(InstabilityRow { scale, report });
        trajectories.push(traj);
    }
    Ok(InstabilityOutput { rows, trajectories })
}

/// Pooled Ornstein–Uhlenbeck sample `dX = −X dt + 0.5 dW`: four paths of 250
/// steps at Δt = 0.01 started at ±5 and ±10.
pub fn ou_increments(seed: u64) -> Result<Increments> {
    let sys = ornstein_uhlenbeck(1.0, OU_SIGMA);
    let grid = uniform_grid(0.0, 0.01, 251);
    let mut parts = Vec::new();
    for (i, x0) in [-10.0, -5.0, 5.0, 10.0].iter().enumerate() {
        let traj = euler_maruyama(&sys, &[*x0], &grid, derive_seed(seed, i as u64))?;
        parts.push(differences(&traj)?);
    }
    Increments::concat(&parts)
}

pub const OU_SIGMA: f64 = 0.5;

/// Errors of an OU recovery over the 10–90% quantile range of visited states.
#[derive(Clone, Debug, Serialize)]
pub struct OuErrors {
    pub f_relative_l2: f64,
    pub sigma_relative_mae: f64,
    pub lower: f64,
    pub upper: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `eval_points` evenly spaced states between the 10% and 90% quantiles.
pub fn quantile_grid(x: &[f64], eval_points: usize) -> (f64, f64, Vec<f64>) {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile(&sorted, 0.1), quantile(&sorted, 0.9));
    let pts = (0..eval_points)
        .map(|i| lo + (hi - lo) * i as f64 / (eval_points - 1) as f64)
        .collect();
    (lo, hi, pts)
}

pub fn ou_errors(fit: &SdeFit, eval_points: usize) -> Result<(OuErrors, Vec<f64>)> {
    let xs: Vec<f64> = fit.x.iter().map(|r| r[0]).collect();
    let (lower, upper, grid) = quantile_grid(&xs, eval_points);
    let pts = points_1d(&grid);
    let f = fit.predict_f(&pts)?;
    let s = fit.predict_sigma(&pts)?;
    let num: f64 = f.iter().zip(&grid).map(|(a, x)| (a + x).powi(2)).sum();
    let den: f64 = grid.iter().map(|x| x * x).sum();
    let mae = s.iter().map(|v| (v - OU_SIGMA).abs()).sum::<f64>() / s.len() as f64;
    Ok((
        OuErrors {
            f_relative_l2: (num / den).sqrt(),
            sigma_relative_mae: mae / OU_SIGMA,
            lower,
            upper,
        },
        grid,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoverySummary {
    pub samples: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// 90th percentile of σ_est at the evaluation points.
    pub sigma_est_p90: f64,
    /// σ at which `σ²Δt` equals the ridge λ, in output units.
    pub lambda_floor_sigma: f64,
    pub self_test: Option<OuErrors>,
}

#[derive(Clone, Debug)]
pub struct RecoveryOutput {
    pub fit: SdeFit,
    pub eval_points: DMatrix<f64>,
    pub labels: Vec<String>,
    pub summary: RecoverySummary,
}

fn p90(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.9)
}

/// Joint drift/diffusion recovery for ω with inputs `(δ, ω)`, or for the OU
/// self-test sample.
pub fn run_sde_recovery(cfg: &ExperimentConfig) -> Result<RecoveryOutput> {
    cfg.validate()?;
    let rc = &cfg.recovery;
    if !rc.self_test && cfg.scenario.mode != SolarMode::Cloudy {
        return Err(config_err(
            "recovery from grid data needs a cloudy scenario",
        ));
    }
    let (data, labels, eval_points) = if rc.self_test {
        let data = DriftData::from_increments(&ou_increments(cfg.ou_seed())?, 0)?;
        let xs: Vec<f64> = data.x.iter().copied().collect();
        let (_, _, grid) = quantile_grid(&xs, rc.eval_points);
        (data, vec!["x".to_string()], points_1d(&grid))
    } else {
        let setup = Setup::new(cfg)?;
        let traj = setup.simulate(cfg.solar_seed())?;
        let rows: Vec<usize> = (0..traj.len()).step_by(rc.stride).collect();
        if rows.len() < 3 {
            return Err(Error::Numerical("trajectory too short for recovery".into()));
        }
        let states = DMatrix::from_fn(rows.len(), 2, |i, j| traj.states[(rows[i], j)]);
        let times = rows.iter().map(|&i| traj.times[i]).collect();
        let labels = vec!["delta".to_string(), "omega".to_string()];
        let thinned = Trajectory::new(times, states, labels.clone())?;
        let data = DriftData::from_increments(&differences(&thinned)?, 1)?;
        let n = data.len();
        let picks: Vec<usize> = (0..rc.eval_points.min(n))
            .map(|i| i * (n - 1) / (rc.eval_points.min(n) - 1).max(1))
            .collect();
        let eval = DMatrix::from_fn(picks.len(), 2, |i, j| data.x[(picks[i], j)]);
        (data, labels, eval)
    };
    let fit = fit_sde(&data, &rc.estimator)?;
    let sigma_eval = fit.predict_sigma(&eval_points)?;
    let self_test = if rc.self_test {
        Some(ou_errors(&fit, rc.eval_points)?.0)
    } else {
        None
    };
    let mean_dt = data.dt.iter().sum::<f64>() / data.len() as f64;
    let summary = RecoverySummary {
        samples: data.len(),
        iterations: fit.iterations,
        converged: fit.converged,
        initial_loss: fit.loss_trace[0],
        final_loss: *fit
            .loss_trace
            .last()
            .expect("trace starts with the initial loss"),
        sigma_est_p90: p90(&sigma_eval),
        lambda_floor_sigma: fit.standardization.output_scale
            * (rc.estimator.lambda / mean_dt).sqrt(),
        self_test,
    };
    Ok(RecoveryOutput {
        fit,
        eval_points,
        labels,
        summary,
    })
}

/// Daylight injection in both modes on the hour axis.
#[derive(Clone, Debug)]
pub struct ProfileOutput {
    pub sunny: SolarPath,
    pub cloudy: SolarPath,
}

impl ProfileOutput {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        use crate::sde::fmt_f64;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["hour", "sunny", "cloudy", "dP"])?;
        for i in 0..self.sunny.len() {
            out.write_record([
                fmt_f64(self.sunny.t[i]),
                fmt_f64(self.sunny.ps[i]),
                fmt_f64(self.cloudy.ps[i]),
                fmt_f64(self.cloudy.dp[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn emit_profile(cfg: &ExperimentConfig) -> Result<ProfileOutput> {
    let setup = Setup::new(cfg)?;
    let sc = &setup.scenario;
    let count = ((sc.t_set - sc.t_rise) / cfg.profile.step_hours).round() as usize + 1;
    let hours = uniform_grid(sc.t_rise, cfg.profile.step_hours, count);
    let sunny = solar_path_hours(
        &SolarScenario {
            mode: SolarMode::Sunny,
            ..sc.clone()
        },
        &hours,
        0,
    )?;
    let cloudy = solar_path_hours(
        &SolarScenario {
            mode: SolarMode::Cloudy,
            ..sc.clone()
        },
        &hours,
        cfg.solar_seed(),
    )?;
    Ok(ProfileOutput { sunny, cloudy })
}
