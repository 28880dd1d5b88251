//! Solar injection: a daylight mean profile plus a mean-reverting fluctuation
//! with state-dependent volatility `dδP = α δP dt + β exp(−δP²) dW`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{euler_maruyama, fmt_f64, FnSde};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolarMode {
    /// Deterministic profile.
    Sunny,
    /// Profile plus fluctuation.
    Cloudy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fluctuation {
    /// Mean-reversion rate (1/hr); negative for reversion.
    pub alpha: f64,
    /// Volatility scale (p.u./√hr).
    pub beta: f64,
    /// Inverse width of the fluctuation covariance.
    pub gamma: f64,
}

impl Default for Fluctuation {
    fn default() -> Self {
        Fluctuation {
            alpha: -1.0,
            beta: 0.05,
            gamma: 1.0 / (2.0 * 0.05 * 0.05),
        }
    }
}

/// Map from simulation seconds to clock hours: `hour = start_hour + hours_per_second · t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarClock {
    pub start_hour: f64,
    pub hours_per_second: f64,
}

impl Default for SolarClock {
    fn default() -> Self {
        SolarClock {
            start_hour: 5.0,
            hours_per_second: 0.75,
        }
    }
}

impl SolarClock {
    pub fn hour(&self, t: f64) -> f64 {
        self.start_hour + self.hours_per_second * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolarScenario {
    pub mode: SolarMode,
    /// Peak of the mean profile (p.u.).
    pub p_max: f64,
    pub t_rise: f64,
    pub t_set: f64,
    /// Multiplier on the whole profile.
    pub scale: f64,
    pub fluctuation: Fluctuation,
    pub clock: SolarClock,
}

impl Default for SolarScenario {
    fn default() -> Self {
        SolarScenario {
            mode: SolarMode::Sunny,
            p_max: 1.0,
            t_rise: 5.0,
            t_set: 20.0,
            scale: 1.0,
            fluctuation: Fluctuation::default(),
            clock: SolarClock::default(),
        }
    }
}

impl SolarScenario {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.p_max,
            self.t_rise,
            self.t_set,
            self.scale,
            self.fluctuation.alpha,
            self.fluctuation.beta,
            self.fluctuation.gamma,
            self.clock.start_hour,
            self.clock.hours_per_second,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("solar scenario fields must be finite"));
        }
        if self.t_rise >= self.t_set {
            return Err(Error::arg("t_rise must precede t_set"));
        }
        if self.p_max <= 0.0 {
            return Err(Error::arg("p_max must be positive"));
        }
        if self.scale < 0.0 {
            return Err(Error::arg("scale must be nonnegative"));
        }
        if self.clock.hours_per_second <= 0.0 {
            return Err(Error::arg("clock.hours_per_second must be positive"));
        }
        if self.fluctuation.gamma <= 0.0 {
            return Err(Error::arg("fluctuation.gamma must be positive"));
        }
        if self.mode == SolarMode::Cloudy {
            if self.fluctuation.alpha >= 0.0 {
                return Err(Error::arg("cloudy mode needs alpha < 0"));
            }
            if self.fluctuation.beta < 0.0 {
                return Err(Error::arg("cloudy mode needs beta >= 0"));
            }
        }
        Ok(())
    }
}

/// `scale · p_max · sin²(π(t − t_rise)/(t_set − t_rise))` inside daylight, 0 outside.
pub fn mean_profile(t_hours: f64, sc: &SolarScenario) -> f64 {
    if !(t_hours > sc.t_rise && t_hours < sc.t_set) {
        return 0.0;
    }
    let phase = PI * (t_hours - sc.t_rise) / (sc.t_set - sc.t_rise);
    sc.scale * sc.p_max * phase.sin().powi(2)
}

/// Mean profile plus the fluctuation in cloudy mode, clamped at zero.
pub fn solar_power(t_hours: f64, sc: &SolarScenario, dp: f64) -> f64 {
    let extra = match sc.mode {
        SolarMode::Sunny => 0.0,
        SolarMode::Cloudy => dp,
    };
    (mean_profile(t_hours, sc) + extra).max(0.0)
}

/// `exp(−γ‖δP − δP′‖²)` for one solar unit.
pub fn fluctuation_kernel(dp: &[f64], dp_prime: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::arg("gamma must be positive"));
    }
    if dp.len() != dp_prime.len() {
        return Err(Error::arg("fluctuation vectors differ in length"));
    }
    let sq: f64 = dp
        .iter()
        .zip(dp_prime)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((-gamma * sq).exp())
}

/// Covariance between units `r` and `l`; distinct units are independent.
pub fn fluctuation_covariance(
    r: usize,
    l: usize,
    dp: &[f64],
    dp_prime: &[f64],
    gamma: f64,
) -> Result<f64> {
    let k = fluctuation_kernel(dp, dp_prime, gamma)?;
    Ok(if r == l { k } else { 0.0 })
}

/// Fluctuation path on an hour grid, starting at δP = 0.
pub fn simulate_fluctuation(sc: &SolarScenario, hours: &[f64], seed: u64) -> Result<Vec<f64>> {
    sc.validate()?;
    if sc.mode != SolarMode::Cloudy {
        return Err(Error::arg("fluctuations are only defined in cloudy mode"));
    }
    let (alpha, beta) = (sc.fluctuation.alpha, sc.fluctuation.beta);
    let sys = FnSde::new(
        1,
        move |x: &[f64], out: &mut [f64]| out[0] = alpha * x[0],
        move |x: &[f64], out: &mut [f64]| out[0] = beta * (-x[0] * x[0]).exp(),
    );
    let traj = euler_maruyama(&sys, &[0.0], hours, seed)?;
    if traj.diverged {
        return Err(Error::Numerical("solar fluctuation diverged".into()));
    }
    Ok(traj.column(0))
}

/// Tabulated injection: mean, fluctuation and clamped total per time point.
#[derive(Clone, Debug, PartialEq)]
pub struct SolarPath {
    pub t: Vec<f64>,
    pub pbar: Vec<f64>,
    pub dp: Vec<f64>,
    pub ps: Vec<f64>,
}

impl SolarPath {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "Pbar", "dP", "Ps"])?;
        for i in 0..self.len() {
            out.write_record([
                fmt_f64(self.t[i]),
                fmt_f64(self.pbar[i]),
                fmt_f64(self.dp[i]),
                fmt_f64(self.ps[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Injection on an hour grid. Sunny mode draws no random numbers.
pub fn solar_path_hours(sc: &SolarScenario, hours: &[f64], seed: u64) -> Result<SolarPath> {
    sc.validate()?;
    let dp = match sc.mode {
        SolarMode::Sunny => vec![0.0; hours.len()],
        SolarMode::Cloudy => simulate_fluctuation(sc, hours, seed)?,
    };
    let pbar: Vec<f64> = hours.iter().map(|h| mean_profile(*h, sc)).collect();
    let ps = hours
        .iter()
        .zip(&dp)
        .map(|(h, d)| solar_power(*h, sc, *d))
        .collect();
    Ok(SolarPath {
        t: hours.to_vec(),
        pbar,
        dp,
        ps,
    })
}

/// Injection on a grid of simulation seconds, mapped to hours through the clock.
pub fn solar_path(sc: &SolarScenario, t_seconds: &[f64], seed: u64) -> Result<SolarPath> {
    let hours: Vec<f64> = t_seconds.iter().map(|t| sc.clock.hour(*t)).collect();
    let mut path = solar_path_hours(sc, &hours, seed)?;
    path.t = t_seconds.to_vec();
    Ok(path)
}
