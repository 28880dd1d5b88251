//! Swing-equation dynamics: network model, equivalent-machine reduction and
//! solar-forced simulation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{euler_maruyama_with_increments, SdeSystem, Trajectory};
use crate::solar::{solar_path, SolarScenario};

/// IEEE 14-bus case shipped with the crate.
pub const IEEE14_JSON: &str = include_str!("../data/ieee14.json");

/// Rotor angle of the nominal operating point of the equivalent machine.
/// Mechanical power sits at `sin(π/6) = 50%` of the transfer limit.
pub const NOMINAL_ANGLE: f64 = PI / 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    /// Active load (p.u.).
    pub load: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: u32,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Pm")]
    pub pm: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ybus {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frequencies {
    #[serde(rename = "omega_B")]
    pub omega_b: f64,
    pub omega_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub ybus: Ybus,
    pub frequencies: Frequencies,
}

fn default_base_mva() -> f64 {
    100.0
}

fn parse_err(msg: String) -> Error {
    Error::Parse(msg)
}

impl GridModel {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: GridModel =
            serde_json::from_str(text).map_err(|e| parse_err(format!("grid file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn ieee14() -> Self {
        GridModel::from_json_str(IEEE14_JSON).expect("shipped grid file is valid")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn load_count(&self) -> usize {
        self.buses.iter().filter(|b| b.load != 0.0).count()
    }

    /// Position of bus `id` in `buses`.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(parse_err("buses: at least one bus is required".into()));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if !b.load.is_finite() {
                return Err(parse_err(format!("buses[{i}].load must be finite")));
            }
            if self.buses[..i].iter().any(|o| o.id == b.id) {
                return Err(parse_err(format!("buses[{i}].id {} is duplicated", b.id)));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            if self.bus_index(g.bus).is_none() {
                return Err(parse_err(format!(
                    "generators[{i}].bus {} is not a bus id",
                    g.bus
                )));
            }
            let fields = [
                ("H", g.h, true),
                ("D", g.d, false),
                ("Pm", g.pm, false),
                ("V", g.v, true),
            ];
            for (name, value, positive) in fields {
                if !value.is_finite() {
                    return Err(parse_err(format!("generators[{i}].{name} must be finite")));
                }
                if positive && value <= 0.0 {
                    return Err(parse_err(format!(
                        "generators[{i}].{name} must be positive, got {value}"
                    )));
                }
            }
        }
        for (name, m) in [("G", &self.ybus.g), ("B", &self.ybus.b)] {
            if m.len() != n {
                return Err(parse_err(format!(
                    "ybus.{name} has {} rows, expected {n}",
                    m.len()
                )));
            }
            if let Some(i) = m.iter().position(|row| row.len() != n) {
                return Err(parse_err(format!(
                    "ybus.{name}[{i}] has {} entries, expected {n}",
                    m[i].len()
                )));
            }
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(parse_err(format!("ybus.{name}[{i}][{j}] must be finite")));
                    }
                    let mirror = m[j][i];
                    if (v - mirror).abs() > 1e-9 * (1.0 + v.abs()) {
                        return Err(parse_err(format!(
                            "ybus.{name} is not symmetric at [{i}][{j}]"
                        )));
                    }
                }
            }
        }
        let f = &self.frequencies;
        if !(f.omega_b.is_finite() && f.omega_b > 0.0) {
            return Err(parse_err("frequencies.omega_B must be positive".into()));
        }
        if !(f.omega_s.is_finite() && f.omega_s > 0.0) {
            return Err(parse_err("frequencies.omega_s must be positive".into()));
        }
        Ok(())
    }

    pub fn g_matrix(&self) -> DMatrix<f64> {
        let n = self.bus_count();
        DMatrix::from_fn(n, n, |i, j| self.ybus.g[i][j])
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        let n = self.bus_count();
        DMatrix::from_fn(n, n, |i, j| self.ybus.b[i][j])
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    GridModel::from_json_str(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Power injected at bus position `k`:
/// `P_d,k + Σᵢ V_k V_i (G_ki cos(θ_k − θ_i) + B_ki sin(θ_k − θ_i))`.
pub fn electrical_power(model: &GridModel, v: &[f64], theta: &[f64], k: usize) -> Result<f64> {
    let n = model.bus_count();
    if v.len() != n || theta.len() != n {
        return Err(Error::arg(format!(
            "voltage and angle vectors must have {n} entries"
        )));
    }
    if k >= n {
        return Err(Error::arg(format!(
            "bus index {k} out of range for {n} buses"
        )));
    }
    let mut flow = 0.0;
    for i in 0..n {
        let dt = theta[k] - theta[i];
        flow += v[k] * v[i] * (model.ybus.g[k][i] * dt.cos() + model.ybus.b[k][i] * dt.sin());
    }
    Ok(model.buses[k].load + flow)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    /// Rotor angle (rad).
    pub delta: f64,
    /// Speed in the units of `omega_s` (p.u. by default).
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalentMachine {
    pub h: f64,
    pub d: f64,
    pub pm: f64,
    /// Transfer limit of `P_e(δ) = p_max sin δ`.
    pub p_max: f64,
    pub omega_b: f64,
    pub omega_s: f64,
}

impl EquivalentMachine {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.h,
            self.d,
            self.pm,
            self.p_max,
            self.omega_b,
            self.omega_s,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("equivalent machine parameters must be finite"));
        }
        if self.h <= 0.0 || self.omega_b <= 0.0 || self.omega_s <= 0.0 {
            return Err(Error::arg("H, omega_B and omega_s must be positive"));
        }
        Ok(())
    }

    pub fn electrical_power(&self, delta: f64) -> f64 {
        self.p_max * delta.sin()
    }

    /// Stable equilibrium angle for total accelerating input `pm + p_s`.
    pub fn equilibrium_angle(&self, p_s: f64) -> Option<f64> {
        let ratio = (self.pm + p_s) / self.p_max;
        (ratio.abs() <= 1.0).then(|| ratio.asin())
    }

    /// Period of small oscillations about `delta0`.
    pub fn small_signal_period(&self, delta0: f64) -> f64 {
        let stiffness = self.omega_b * self.omega_s * self.p_max * delta0.cos() / (2.0 * self.h);
        2.0 * PI / stiffness.abs().sqrt()
    }

    /// First integral of the undamped flow with constant input `p`:
    /// `(H ω_B/ω_s)(ω − ω_s)² − p δ − p_max cos δ`.
    pub fn energy(&self, state: MachineState, p: f64) -> f64 {
        let dw = state.omega - self.omega_s;
        self.h * self.omega_b / self.omega_s * dw * dw
            - p * state.delta
            - self.p_max * state.delta.cos()
    }
}

/// `(dδ/dt, dω/dt)` of the solar-forced equivalent machine.
pub fn swing_rhs(state: MachineState, eq: &EquivalentMachine, p_s: f64, _t: f64) -> (f64, f64) {
    let dw = state.omega - eq.omega_s;
    let ddelta = eq.omega_b * dw;
    let gain = eq.omega_s / (2.0 * eq.h);
    let domega = gain * (eq.pm - eq.electrical_power(state.delta)) + gain * (-eq.d * dw + p_s);
    (ddelta, domega)
}

/// Center-of-inertia aggregation with `p_max` chosen so the summed dispatch
/// sits at [`NOMINAL_ANGLE`].
pub fn reduce_to_equivalent(model: &GridModel) -> Result<EquivalentMachine> {
    if model.generators.is_empty() {
        return Err(Error::arg("no generators to aggregate"));
    }
    let h = model.generators.iter().map(|g| g.h).sum();
    let d = model.generators.iter().map(|g| g.d).sum();
    let pm: f64 = model.generators.iter().map(|g| g.pm).sum();
    if pm <= 0.0 {
        return Err(Error::arg("total mechanical power must be positive"));
    }
    Ok(EquivalentMachine {
        h,
        d,
        pm,
        p_max: pm / NOMINAL_ANGLE.sin(),
        omega_b: model.frequencies.omega_b,
        omega_s: model.frequencies.omega_s,
    })
}

/// Multi-machine swing dynamics over the network, one `(δ_k, ω_k)` pair per
/// generator. Non-generator buses keep the supplied angles and voltages.
///
/// State layout: all angles first, then all speeds.
#[derive(Clone, Debug)]
pub struct NetworkSwing {
    model: GridModel,
    voltages: Vec<f64>,
    angles: Vec<f64>,
    gen_bus: Vec<usize>,
}

impl NetworkSwing {
    pub fn new(model: &GridModel, voltages: Vec<f64>, angles: Vec<f64>) -> Result<Self> {
        let n = model.bus_count();
        if voltages.len() != n || angles.len() != n {
            return Err(Error::arg(format!("bus vectors must have {n} entries")));
        }
        if model.generators.is_empty() {
            return Err(Error::arg("network has no generators"));
        }
        let gen_bus: Vec<usize> = model
            .generators
            .iter()
            .map(|g| model.bus_index(g.bus).expect("validated"))
            .collect();
        let mut voltages = voltages;
        for (g, &b) in model.generators.iter().zip(&gen_bus) {
            voltages[b] = g.v;
        }
        Ok(NetworkSwing {
            model: model.clone(),
            voltages,
            angles,
            gen_bus,
        })
    }

    /// Flat start: unit voltages off the generator buses, all angles zero.
    pub fn flat(model: &GridModel) -> Result<Self> {
        let n = model.bus_count();
        NetworkSwing::new(model, vec![1.0; n], vec![0.0; n])
    }

    pub fn generator_count(&self) -> usize {
        self.gen_bus.len()
    }
}

impl SdeSystem for NetworkSwing {
    fn dim(&self) -> usize {
        2 * self.gen_bus.len()
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let g = self.gen_bus.len();
        let mut theta = self.angles.clone();
        for (k, &b) in self.gen_bus.iter().enumerate() {
            theta[b] = x[k];
        }
        let ws = self.model.frequencies.omega_s;
        let wb = self.model.frequencies.omega_b;
        for (k, gen) in self.model.generators.iter().enumerate() {
            let pe = electrical_power(&self.model, &self.voltages, &theta, self.gen_bus[k])
                .expect("sizes checked at construction");
            let dw = x[g + k] - ws;
            out[k] = wb * dw;
            out[g + k] = ws / (2.0 * gen.h) * (gen.pm - pe - gen.d * dw);
        }
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn labels(&self) -> Vec<String> {
        let g = self.gen_bus.len();
        (0..g)
            .map(|k| format!("delta_{}", self.model.generators[k].bus))
            .chain((0..g).map(|k| format!("omega_{}", self.model.generators[k].bus)))
            .collect()
    }
}

/// Equivalent machine driven by a tabulated injection (zero-order hold).
struct ForcedSwing<'a> {
    eq: &'a EquivalentMachine,
    times: &'a [f64],
    ps: &'a [f64],
}

impl SdeSystem for ForcedSwing<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let idx = self.times.partition_point(|s| *s <= t).saturating_sub(1);
        let state = MachineState {
            delta: x[0],
            omega: x[1],
        };
        let (a, b) = swing_rhs(state, self.eq, self.ps[idx], t);
        out[0] = a;
        out[1] = b;
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn labels(&self) -> Vec<String> {
        vec!["delta".into(), "omega".into()]
    }
}

/// Integrate the equivalent machine on `t_grid` (seconds) under the
/// scenario's injection. Randomness enters only through the cloudy-mode
/// fluctuation; the returned trajectory has columns `delta, omega, p_s`.
pub fn simulate_grid(
    eq: &EquivalentMachine,
    scenario: &SolarScenario,
    t_grid: &[f64],
    seed: u64,
    x0: MachineState,
) -> Result<Trajectory> {
    eq.validate()?;
    let solar = solar_path(scenario, t_grid, seed)?;
    let sys = ForcedSwing {
        eq,
        times: t_grid,
        ps: &solar.ps,
    };
    let steps = t_grid.len().saturating_sub(1);
    let traj = euler_maruyama_with_increments(
        &sys,
        &[x0.delta, x0.omega],
        t_grid,
        &DMatrix::zeros(steps, 2),
    )?;
    let with_ps = traj.with_column("p_s", &solar.ps[..traj.len()])?;
    Ok(with_ps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub max_abs_delta: f64,
    pub max_abs_omega_dev: f64,
    /// `max|δ|` over the first small-signal period.
    pub first_cycle_amplitude: f64,
    pub truncated: bool,
    pub unstable: bool,
}

/// Ratio of horizon to first-cycle `max|δ|` above which a run is unstable.
pub const INSTABILITY_RATIO: f64 = 10.0;

/// Flag runs whose `max|δ|` exceeds [`INSTABILITY_RATIO`] times its
/// first-cycle value, or that were truncated by divergence.
pub fn assess_stability(
    traj: &Trajectory,
    eq: &EquivalentMachine,
    delta0: f64,
) -> Result<StabilityReport> {
    let delta = traj
        .column_by_label("delta")
        .ok_or_else(|| Error::arg("trajectory has no delta column"))?;
    let omega = traj
        .column_by_label("omega")
        .ok_or_else(|| Error::arg("trajectory has no omega column"))?;
    let t0 = traj.times[0];
    let cycle_end = t0 + eq.small_signal_period(delta0);
    let mut first = 0.0f64;
    let mut max_delta = 0.0f64;
    let mut max_dw = 0.0f64;
    for i in 0..traj.len() {
        let a = delta[i].abs();
        if traj.times[i] <= cycle_end {
            first = first.max(a);
        }
        max_delta = max_delta.max(a);
        max_dw = max_dw.max((omega[i] - eq.omega_s).abs());
    }
    let unstable = traj.diverged || max_delta > INSTABILITY_RATIO * first;
    Ok(StabilityReport {
        max_abs_delta: max_delta,
        max_abs_omega_dev: max_dw,
        first_cycle_amplitude: first,
        truncated: traj.diverged,
        unstable,
    })
}
