//! Euler–Maruyama integration with seeded, per-dimension Wiener streams.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Drift and diagonal diffusion of `dX = f(t, X) dt + σ(t, X) dW`.
///
/// Diffusion is diagonal: dimension `i` is driven by its own Wiener process.
pub trait SdeSystem {
    fn dim(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Column labels for trajectories produced from this system.
    fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

/// Autonomous system from a pair of closures.
pub struct FnSde<F, S> {
    dim: usize,
    drift: F,
    diffusion: S,
    labels: Vec<String>,
}

impl<F, S> FnSde<F, S>
where
    F: Fn(&[f64], &mut [f64]),
    S: Fn(&[f64], &mut [f64]),
{
    pub fn new(dim: usize, drift: F, diffusion: S) -> Self {
        FnSde {
            dim,
            drift,
            diffusion,
            labels: (0..dim).map(|i| format!("x{i}")).collect(),
        }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        self.labels = labels.iter().map(|s| s.to_string()).collect();
        self
    }
}

impl<F, S> SdeSystem for FnSde<F, S>
where
    F: Fn(&[f64], &mut [f64]),
    S: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }
}

/// Scalar `dX = −θ X dt + σ dW`.
pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> impl SdeSystem {
    FnSde::new(
        1,
        move |x, out| out[0] = -theta * x[0],
        move |_, out| out[0] = sigma,
    )
}

/// Scalar `dX = μ X dt + s X dW`.
pub fn geometric_brownian(mu: f64, s: f64) -> impl SdeSystem {
    FnSde::new(
        1,
        move |x, out| out[0] = mu * x[0],
        move |x, out| out[0] = s * x[0],
    )
}

/// Sampled path: one row of `states` per entry of `times`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Set when integration hit a non-finite state and the path was cut short.
    pub diverged: bool,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if times.len() != states.nrows() {
            return Err(Error::arg(format!(
                "{} times but {} state rows",
                times.len(),
                states.nrows()
            )));
        }
        if labels.len() != states.ncols() {
            return Err(Error::arg("one label per state column is required"));
        }
        check_grid(&times, 1)?;
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("trajectory states must be finite"));
        }
        Ok(Trajectory {
            times,
            states,
            labels,
            diverged: false,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.column(j).iter().copied().collect()
    }

    pub fn column_by_label(&self, label: &str) -> Option<Vec<f64>> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|j| self.column(j))
    }

    /// Copy with one more column appended.
    pub fn with_column(&self, label: &str, values: &[f64]) -> Result<Trajectory> {
        if values.len() != self.len() {
            return Err(Error::arg("appended column has the wrong length"));
        }
        let mut states = self.states.clone().insert_column(self.dim(), 0.0);
        for (i, v) in values.iter().enumerate() {
            states[(i, self.dim())] = *v;
        }
        let mut labels = self.labels.clone();
        labels.push(label.to_string());
        Ok(Trajectory {
            times: self.times.clone(),
            states,
            labels,
            diverged: self.diverged,
        })
    }

    /// CSV with header `t,<labels>` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            row.extend(self.states.row(i).iter().map(|v| fmt_f64(*v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("t") || header.len() < 2 {
            return Err(Error::Parse(
                "trajectory CSV must start with a 't' column".into(),
            ));
        }
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            times.push(parse(&rec[0])?);
            for field in rec.iter().skip(1) {
                values.push(parse(field)?);
            }
        }
        let states = DMatrix::from_row_slice(times.len(), labels.len(), &values);
        Trajectory::new(times, states, labels)
    }
}

/// Full-precision (17 significant digit) formatting used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn check_grid(times: &[f64], min_len: usize) -> Result<()> {
    if times.len() < min_len {
        return Err(Error::arg(format!(
            "time grid needs at least {min_len} points"
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::arg("time grid must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("time grid must be strictly increasing"));
    }
    Ok(())
}

/// `count` evenly spaced times starting at `start` with spacing `step`.
pub fn uniform_grid(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + step * i as f64).collect()
}

/// Standard-normal stream for one state dimension.
fn normal_stream(seed: u64, dimension: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(dimension as u64);
    rng
}

/// `n` i.i.d. Normal(0, dt) increments. Same draws as dimension 0 of
/// [`euler_maruyama`] on a uniform grid with the same seed.
pub fn wiener_increments(n: usize, dt: f64, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::arg("need at least one increment"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::arg(format!("dt must be positive, got {dt}")));
    }
    let mut rng = normal_stream(seed, 0);
    let scale = dt.sqrt();
    Ok((0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect())
}

/// Integrate on `t_grid`, drawing `ξ_{n,i}` from stream `i` of `seed`.
pub fn euler_maruyama<S: SdeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    t_grid: &[f64],
    seed: u64,
) -> Result<Trajectory> {
    check_grid(t_grid, 2)?;
    let d = system.dim();
    let steps = t_grid.len() - 1;
    let mut streams: Vec<ChaCha8Rng> = (0..d).map(|i| normal_stream(seed, i)).collect();
    let mut dw = DMatrix::zeros(steps, d);
    for (i, rng) in streams.iter_mut().enumerate() {
        for n in 0..steps {
            let z: f64 = StandardNormal.sample(rng);
            dw[(n, i)] = (t_grid[n + 1] - t_grid[n]).sqrt() * z;
        }
    }
    euler_maruyama_with_increments(system, x0, t_grid, &dw)
}

/// Integrate with caller-supplied Wiener increments (`steps × dim`).
pub fn euler_maruyama_with_increments<S: SdeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    t_grid: &[f64],
    dw: &DMatrix<f64>,
) -> Result<Trajectory> {
    check_grid(t_grid, 2)?;
    let d = system.dim();
    if x0.len() != d {
        return Err(Error::arg(format!(
            "x0 has {} entries, system has {d}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("x0 must be finite"));
    }
    let steps = t_grid.len() - 1;
    if dw.shape() != (steps, d) {
        return Err(Error::arg(format!(
            "increments have shape {:?}, expected {:?}",
            dw.shape(),
            (steps, d)
        )));
    }
    let mut states = DMatrix::zeros(t_grid.len(), d);
    states.row_mut(0).copy_from_slice(x0);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut rows = 1;
    let mut diverged = false;
    for n in 0..steps {
        let t = t_grid[n];
        let dt = t_grid[n + 1] - t;
        system.drift(t, &x, &mut f);
        system.diffusion(t, &x, &mut g);
        for i in 0..d {
            x[i] = x[i] + f[i] * dt + g[i] * dw[(n, i)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        states.row_mut(n + 1).copy_from_slice(&x);
        rows += 1;
    }
    let states = states.rows(0, rows).into_owned();
    Ok(Trajectory {
        times: t_grid[..rows].to_vec(),
        states,
        labels: system.labels(),
        diverged,
    })
}

/// Increment dataset `(X_n, Y_n = X_{n+1} − X_n, Δt_n)` of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub dt: Vec<f64>,
}

impl Increments {
    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    /// Stack several increment sets (e.g. from independent paths).
    pub fn concat(parts: &[Increments]) -> Result<Increments> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("nothing to concatenate"))?;
        let d = first.x.ncols();
        if parts.iter().any(|p| p.x.ncols() != d) {
            return Err(Error::arg("increment sets differ in dimension"));
        }
        let n: usize = parts.iter().map(Increments::len).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DMatrix::zeros(n, d);
        let mut dt = Vec::with_capacity(n);
        let mut row = 0;
        for p in parts {
            x.rows_mut(row, p.len()).copy_from(&p.x);
            y.rows_mut(row, p.len()).copy_from(&p.y);
            dt.extend_from_slice(&p.dt);
            row += p.len();
        }
        Ok(Increments { x, y, dt })
    }
}

pub fn differences(traj: &Trajectory) -> Result<Increments> {
    let n = traj.len();
    if n < 2 {
        return Err(Error::arg("differences need at least two rows"));
    }
    let x = traj.states.rows(0, n - 1).into_owned();
    let y = traj.states.rows(1, n - 1) - traj.states.rows(0, n - 1);
    let dt = traj.times.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Increments { x, y, dt })
}
