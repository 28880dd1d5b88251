//! Joint drift/diffusion recovery from an increment dataset.
//!
//! Given pairs `(X_n, Y_n)` with `Y_n = f(X_n)Δt_n + σ(X_n)√Δt_n ξ_n`, the
//! drift at the samples is the kernel-ridge closed form
//!
//! ```text
//! f̃(σ̃) = K Λ (Λ K Λ + Σ + λI)⁻¹ Y,   Λ = diag(Δt),  Σ = diag(σ̃² Δt)
//! ```
//!
//! and σ̃ minimizes the reduced loss
//!
//! ```text
//! L(σ̃) = (Y − Λf̃)ᵀ(Σ + λI)⁻¹(Y − Λf̃) + Σₙ ln(σ̃ₙ²Δtₙ + λ) + f̃ᵀK⁻¹f̃ + σ̃ᵀG̃⁻¹σ̃.
//! ```
//!
//! With `A = ΛKΛ + Σ + λI` and `α = A⁻¹Y`, the residual is `Y − Λf̃ = (Σ + λI)α`
//! and `f̃ᵀK⁻¹f̃ = αᵀΛKΛα`, so the first and third terms add up to `YᵀA⁻¹Y`.
//! [`ReducedLoss`] evaluates that form, which never inverts `K`. The σ prior
//! uses `G̃ = G + γI`: σ̃ is modelled as a draw from the `G` process plus the
//! i.i.d. `N(0, γ)` perturbation that the smoothing step removes again.
//!
//! The minimizer σ̃_min is smoothed with `G(G + γI)⁻¹σ̃_min` and extended off
//! the samples through kernel sections, for σ as well as for f.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, KernelSpec};
use crate::linalg::{factor_eigen, pivoted_cholesky, JitterLadder, RegularizedCholesky};
use crate::sde::{fmt_f64, Increments};

// Relative truncation for low-rank kernel factors.
const LOW_RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    /// Initial trial step of each line search.
    pub step_size: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Relative step of the central-difference gradient check.
    pub fd_step: f64,
    pub armijo: f64,
    pub backtrack: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            step_size: 1.0,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            fd_step: 1e-5,
            armijo: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub kernel_f: KernelSpec,
    pub kernel_sigma: KernelSpec,
    pub lambda: f64,
    pub gamma: f64,
    pub gd: GdConfig,
    /// Rescale inputs and increments to unit range before estimating.
    pub standardize: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kernel_f: KernelSpec::Rbf { length_scale: 0.7 },
            kernel_sigma: KernelSpec::Rbf { length_scale: 0.5 },
            lambda: 1e-6,
            gamma: 1e-4,
            gd: GdConfig::default(),
            standardize: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel_f.validate()?;
        self.kernel_sigma.validate()?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("gamma", self.gamma)?;
        positive("gd.step_size", self.gd.step_size)?;
        positive("gd.gradient_tolerance", self.gd.gradient_tolerance)?;
        positive("gd.fd_step", self.gd.fd_step)?;
        positive("gd.armijo", self.gd.armijo)?;
        if !(self.gd.backtrack > 0.0 && self.gd.backtrack < 1.0) {
            return Err(Error::arg("gd.backtrack must lie in (0, 1)"));
        }
        if self.gd.max_iterations == 0 {
            return Err(Error::arg("gd.max_iterations must be positive"));
        }
        Ok(())
    }
}

fn check_lengths(n: usize, dt: &[f64], y: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::arg("empty dataset"));
    }
    if dt.len() != n || y.len() != n {
        return Err(Error::arg(format!(
            "inconsistent sizes: {n} points, {} steps, {} increments",
            dt.len(),
            y.len()
        )));
    }
    if dt.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::arg("time steps must be positive"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("increments must be finite"));
    }
    Ok(())
}

/// Dense `K Λ (Λ K Λ + Σ + λI)⁻¹ Y` and the dual vector `Λ(ΛKΛ + Σ + λI)⁻¹Y`.
fn drift_dual(
    k: &DMatrix<f64>,
    dt: &[f64],
    sigma_diag: &[f64],
    lambda: f64,
    y: &[f64],
) -> Result<DVector<f64>> {
    let n = k.nrows();
    if !k.is_square() || sigma_diag.len() != n {
        return Err(Error::arg("K must be square and Σ must match its size"));
    }
    check_lengths(n, dt, y)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::arg("lambda must be positive"));
    }
    if sigma_diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::arg("Σ entries must be nonnegative"));
    }
    let mut a = DMatrix::from_fn(n, n, |i, j| dt[i] * k[(i, j)] * dt[j]);
    for i in 0..n {
        a[(i, i)] += sigma_diag[i];
    }
    let chol = RegularizedCholesky::new(&a, lambda, &JitterLadder::default())?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    Ok(DVector::from_fn(n, |i, _| dt[i] * alpha[i]))
}

/// Closed-form drift at the samples. `dt` and `sigma_diag` are the diagonals
/// of Λ and Σ.
pub fn f_opt_closed_form(
    k: &DMatrix<f64>,
    dt: &[f64],
    sigma_diag: &[f64],
    lambda: f64,
    y: &[f64],
) -> Result<DVector<f64>> {
    let dual = drift_dual(k, dt, sigma_diag, lambda, y)?;
    Ok(k * dual)
}

/// Σ diagonal `σ̃ₙ² Δtₙ`.
pub fn sigma_diagonal(sigma: &[f64], dt: &[f64]) -> Vec<f64> {
    sigma.iter().zip(dt).map(|(s, d)| s * s * d).collect()
}

/// Reduced loss over σ̃ with `K` and `G` held as low-rank factors.
#[derive(Clone, Debug)]
pub struct ReducedLoss {
    y: DVector<f64>,
    dt: DVector<f64>,
    lambda: f64,
    /// Λ·F with K ≈ F·Fᵀ.
    u: DMatrix<f64>,
    g_basis: DMatrix<f64>,
    g_eigen: Vec<f64>,
    prior_floor: f64,
}

impl ReducedLoss {
    /// `prior_floor` is the γ added to `G` in the σ prior.
    pub fn new(
        k: &DMatrix<f64>,
        g: &DMatrix<f64>,
        dt: &[f64],
        y: &[f64],
        lambda: f64,
        prior_floor: f64,
    ) -> Result<Self> {
        let n = y.len();
        check_lengths(n, dt, y)?;
        if k.shape() != (n, n) || g.shape() != (n, n) {
            return Err(Error::arg(format!("K and G must be {n}×{n}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::arg("lambda must be positive"));
        }
        if !(prior_floor.is_finite() && prior_floor > 0.0) {
            return Err(Error::arg("prior floor must be positive"));
        }
        if k.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("Gram matrices must be finite"));
        }
        let fk = pivoted_cholesky(k, LOW_RANK_TOL, n);
        let u = DMatrix::from_fn(n, fk.ncols(), |i, j| dt[i] * fk[(i, j)]);
        let fg = pivoted_cholesky(g, LOW_RANK_TOL, n);
        let (g_basis, g_eigen) = factor_eigen(&fg, LOW_RANK_TOL);
        Ok(ReducedLoss {
            y: DVector::from_column_slice(y),
            dt: DVector::from_column_slice(dt),
            lambda,
            u,
            g_basis,
            g_eigen,
            prior_floor,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Retained rank of the drift kernel factor.
    pub fn drift_rank(&self) -> usize {
        self.u.ncols()
    }

    fn check_sigma(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.len() {
            return Err(Error::arg(format!(
                "σ̃ has {} entries, dataset has {}",
                s.len(),
                self.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("σ̃ must be finite"));
        }
        Ok(())
    }

    /// `(d, α)` with `d = σ̃²Δt + λ` and `α = (ΛKΛ + diag d)⁻¹ Y` by Woodbury.
    fn solve_data(&self, s: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.len();
        let d = DVector::from_fn(n, |i, _| s[i] * s[i] * self.dt[i] + self.lambda);
        let z = self.y.component_div(&d);
        let r = self.u.ncols();
        if r == 0 {
            return Ok((d, z));
        }
        let mut scaled = self.u.clone();
        for i in 0..n {
            scaled.row_mut(i).scale_mut(1.0 / d[i]);
        }
        let mut m = self.u.transpose() * &scaled;
        for i in 0..r {
            m[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(m).ok_or_else(|| {
            Error::Numerical("Woodbury capacitance matrix is not positive".into())
        })?;
        let c = chol.solve(&(self.u.transpose() * &z));
        let alpha = z - scaled * c;
        Ok((d, alpha))
    }

    /// `G̃⁻¹ v`.
    fn prior_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.spectral_apply(
            v,
            |mu| 1.0 / (mu + self.prior_floor),
            1.0 / self.prior_floor,
        )
    }

    /// `V·diag(φ(μ))·Vᵀv + c_perp·(v − VVᵀv)`.
    fn spectral_apply(
        &self,
        v: &DVector<f64>,
        phi: impl Fn(f64) -> f64,
        c_perp: f64,
    ) -> DVector<f64> {
        let coef = self.g_basis.transpose() * v;
        let in_span = &self.g_basis * &coef;
        let weighted = DVector::from_fn(coef.len(), |i, _| coef[i] * phi(self.g_eigen[i]));
        &self.g_basis * weighted + (v - in_span) * c_perp
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        self.check_sigma(s)?;
        let (d, alpha) = self.solve_data(s)?;
        let sv = DVector::from_column_slice(s);
        let data = self.y.dot(&alpha);
        let logs: f64 = d.iter().map(|v| v.ln()).sum();
        let prior = sv.dot(&self.prior_apply(&sv));
        Ok(data + logs + prior)
    }

    pub fn value_and_gradient(&self, s: &[f64]) -> Result<(f64, DVector<f64>)> {
        self.check_sigma(s)?;
        let (d, alpha) = self.solve_data(s)?;
        let sv = DVector::from_column_slice(s);
        let prior_grad = self.prior_apply(&sv);
        let value =
            self.y.dot(&alpha) + d.iter().map(|v| v.ln()).sum::<f64>() + sv.dot(&prior_grad);
        let grad = DVector::from_fn(self.len(), |i, _| {
            2.0 * s[i] * self.dt[i] * (1.0 / d[i] - alpha[i] * alpha[i]) + 2.0 * prior_grad[i]
        });
        Ok((value, grad))
    }

    /// Central differences with step `rel_step·(1 + |σ̃ₙ|)`.
    pub fn fd_gradient(&self, s: &[f64], rel_step: f64) -> Result<DVector<f64>> {
        self.check_sigma(s)?;
        let mut probe = s.to_vec();
        let mut grad = DVector::zeros(s.len());
        for i in 0..s.len() {
            let h = rel_step * (1.0 + s[i].abs());
            probe[i] = s[i] + h;
            let up = self.value(&probe)?;
            probe[i] = s[i] - h;
            let down = self.value(&probe)?;
            probe[i] = s[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Scalar estimate of the per-sample data curvature at constant `level`.
    fn data_curvature(&self, level: f64) -> f64 {
        let dt = self.dt.mean();
        let d = level * level * dt + self.lambda;
        4.0 * level * level * dt * dt / (d * d)
    }

    /// Approximate inverse Hessian `(2G̃⁻¹ + h·I)⁻¹` applied to `g`.
    fn precondition(&self, g: &DVector<f64>, h: f64) -> DVector<f64> {
        let floor = self.prior_floor;
        self.spectral_apply(
            g,
            |mu| 1.0 / (2.0 / (mu + floor) + h),
            1.0 / (2.0 / floor + h),
        )
    }
}

/// Evaluate the reduced loss for one σ̃; builds the factorizations each call.
pub fn reduced_loss(
    sigma_tilde: &[f64],
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    dt: &[f64],
    y: &[f64],
    lambda: f64,
    prior_floor: f64,
) -> Result<f64> {
    ReducedLoss::new(k, g, dt, y, lambda, prior_floor)?.value(sigma_tilde)
}

/// Result of [`minimize_sigma`].
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaMinimum {
    /// `|σ̃|` at the final iterate.
    pub sigma_min: Vec<f64>,
    /// Loss at the start and after every accepted step.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Preconditioned gradient descent with Armijo backtracking.
///
/// The search direction is `−P∇L` with `P ≈ (2G̃⁻¹ + hI)⁻¹`, which is exact on
/// the prior term and uses a scalar estimate `h` of the data curvature.
pub fn minimize_sigma(loss: &ReducedLoss, gd: &GdConfig, init: &[f64]) -> Result<SigmaMinimum> {
    let (mut value, mut grad) = loss.value_and_gradient(init)?;
    if !value.is_finite() {
        return Err(Error::arg("reduced loss is not finite at the initial σ̃"));
    }
    let level = (init.iter().map(|v| v * v).sum::<f64>() / init.len() as f64).sqrt();
    let h = loss.data_curvature(level);
    let mut s = init.to_vec();
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < gd.max_iterations {
        if grad.norm() < gd.gradient_tolerance {
            converged = true;
            break;
        }
        let direction = -loss.precondition(&grad, h);
        let slope = grad.dot(&direction);
        if slope >= 0.0 {
            converged = true;
            break;
        }
        let mut t = gd.step_size;
        let mut accepted = None;
        while t > 1e-14 * gd.step_size {
            let trial: Vec<f64> = s
                .iter()
                .zip(direction.iter())
                .map(|(a, d)| a + t * d)
                .collect();
            if let Ok((v, g)) = loss.value_and_gradient(&trial) {
                if v.is_finite() && v <= value + gd.armijo * t * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            t *= gd.backtrack;
        }
        let Some((trial, v, g)) = accepted else {
            // No step decreases the loss to working precision.
            converged = true;
            break;
        };
        s = trial;
        value = v;
        grad = g;
        trace.push(value);
        iterations += 1;
    }
    Ok(SigmaMinimum {
        sigma_min: s.iter().map(|v| v.abs()).collect(),
        loss_trace: trace,
        iterations,
        converged,
    })
}

/// `G(G + γI)⁻¹ σ̃_min`.
pub fn smooth_sigma(g: &DMatrix<f64>, gamma: f64, sigma_min: &[f64]) -> Result<DVector<f64>> {
    let w = sigma_weights(g, gamma, sigma_min)?;
    Ok(g * w)
}

fn sigma_weights(g: &DMatrix<f64>, gamma: f64, sigma_min: &[f64]) -> Result<DVector<f64>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::arg("gamma must be positive"));
    }
    if g.shape() != (sigma_min.len(), sigma_min.len()) {
        return Err(Error::arg("G does not match σ̃_min"));
    }
    let chol = RegularizedCholesky::new(g, gamma, &JitterLadder::default())?;
    Ok(chol.solve(&DVector::from_column_slice(sigma_min)))
}

fn check_query(x_star: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_star.len() != x.ncols() {
        return Err(Error::arg("query point has the wrong dimension"));
    }
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("query point must be finite"));
    }
    Ok(DMatrix::from_row_slice(1, x_star.len(), x_star))
}

/// `σ_est(x*) = G(x*, X)(G(X, X) + γI)⁻¹ σ̃_min`.
pub fn predict_sigma(
    x_star: &[f64],
    kernel_sigma: &KernelSpec,
    x: &DMatrix<f64>,
    gamma: f64,
    sigma_min: &[f64],
) -> Result<f64> {
    let q = check_query(x_star, x)?;
    let w = sigma_weights(&gram_symmetric(kernel_sigma, x)?, gamma, sigma_min)?;
    Ok((gram(kernel_sigma, &q, x)? * w)[0])
}

/// `f_est(x*) = K(x*, X) Λ (ΛKΛ + Σ + λI)⁻¹ Y` with Σ built from σ̃_min.
pub fn predict_f(
    x_star: &[f64],
    kernel_f: &KernelSpec,
    x: &DMatrix<f64>,
    dt: &[f64],
    sigma_min: &[f64],
    lambda: f64,
    y: &[f64],
) -> Result<f64> {
    let q = check_query(x_star, x)?;
    let k = gram_symmetric(kernel_f, x)?;
    let dual = drift_dual(&k, dt, &sigma_diagonal(sigma_min, dt), lambda, y)?;
    Ok((gram(kernel_f, &q, x)? * dual)[0])
}

/// One scalar output of a (possibly vector) process: inputs are full states,
/// targets are increments of column `output`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftData {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub dt: Vec<f64>,
    pub output: usize,
}

impl DriftData {
    pub fn from_increments(inc: &Increments, output: usize) -> Result<Self> {
        if output >= inc.y.ncols() {
            return Err(Error::arg(format!("no state column {output}")));
        }
        Ok(DriftData {
            x: inc.x.clone(),
            y: inc.y.column(output).iter().copied().collect(),
            dt: inc.dt.clone(),
            output,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Affine change of units applied before estimation.
///
/// Inputs map to `(x − center)/scale` per column; increments divide by the
/// scale of the output column, so `f` and `σ` scale by the same factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub output_scale: f64,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
            output_scale: 1.0,
        }
    }

    /// Center on the column mean and divide by the largest absolute deviation.
    pub fn from_data(data: &DriftData) -> Self {
        let (n, d) = data.x.shape();
        let mut center = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for j in 0..d {
            let col = data.x.column(j);
            let mean = col.sum() / n as f64;
            let spread = col.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
            center.push(mean);
            scale.push(if spread > 0.0 { spread } else { 1.0 });
        }
        let output_scale = scale[data.output];
        Standardization {
            center,
            scale,
            output_scale,
        }
    }

    pub fn apply_points(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.center[j]) / self.scale[j]
        })
    }
}

/// Recovered drift and diffusion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdeFit {
    /// Sample inputs in original units, one row per sample.
    pub x: Vec<Vec<f64>>,
    /// Drift at the samples (original units).
    pub f_hat: Vec<f64>,
    /// `|σ̃_min|` in original units.
    pub sigma_min: Vec<f64>,
    /// Smoothed σ at the samples (original units).
    pub sigma_avg: Vec<f64>,
    /// Reduced-loss values of the descent, in standardized units.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub config: EstimatorConfig,
    pub standardization: Standardization,
    drift_weights: Vec<f64>,
    sigma_weights: Vec<f64>,
}

/// Residual-based starting point `|Yₙ − m·Δtₙ| / √Δtₙ` with `m = median(Y/Δt)`;
/// a constant pooled estimate when fewer than 10 samples are available.
pub fn initial_sigma(y: &[f64], dt: &[f64]) -> Vec<f64> {
    let mut rates: Vec<f64> = y.iter().zip(dt).map(|(a, b)| a / b).collect();
    rates.sort_by(f64::total_cmp);
    let n = rates.len();
    let median = if n % 2 == 1 {
        rates[n / 2]
    } else {
        0.5 * (rates[n / 2 - 1] + rates[n / 2])
    };
    let resid: Vec<f64> = y.iter().zip(dt).map(|(a, b)| a - median * b).collect();
    if n < 10 {
        let ss: f64 = resid.iter().map(|r| r * r).sum();
        let total: f64 = dt.iter().sum();
        vec![(ss / total).sqrt(); n]
    } else {
        resid
            .iter()
            .zip(dt)
            .map(|(r, b)| r.abs() / b.sqrt())
            .collect()
    }
}

pub fn fit_sde(data: &DriftData, config: &EstimatorConfig) -> Result<SdeFit> {
    config.validate()?;
    let n = data.len();
    if data.x.nrows() != n {
        return Err(Error::arg("inputs and increments differ in length"));
    }
    check_lengths(n, &data.dt, &data.y)?;
    if data.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("inputs must be finite"));
    }
    let st = if config.standardize {
        Standardization::from_data(data)
    } else {
        Standardization::identity(data.x.ncols())
    };
    let xs = st.apply_points(&data.x);
    let ys: Vec<f64> = data.y.iter().map(|v| v / st.output_scale).collect();

    let k = gram_symmetric(&config.kernel_f, &xs)?;
    let g = if config.kernel_sigma == config.kernel_f {
        k.clone()
    } else {
        gram_symmetric(&config.kernel_sigma, &xs)?
    };
    let loss = ReducedLoss::new(&k, &g, &data.dt, &ys, config.lambda, config.gamma)?;
    let init = initial_sigma(&ys, &data.dt);
    let min = minimize_sigma(&loss, &config.gd, &init)?;

    let sigma_w = sigma_weights(&g, config.gamma, &min.sigma_min)?;
    let sigma_avg = &g * &sigma_w;
    let drift_w = drift_dual(
        &k,
        &data.dt,
        &sigma_diagonal(&min.sigma_min, &data.dt),
        config.lambda,
        &ys,
    )?;
    let f_hat = &k * &drift_w;

    let c = st.output_scale;
    Ok(SdeFit {
        x: (0..n)
            .map(|i| data.x.row(i).iter().copied().collect())
            .collect(),
        f_hat: f_hat.iter().map(|v| c * v).collect(),
        sigma_min: min.sigma_min.iter().map(|v| c * v).collect(),
        sigma_avg: sigma_avg.iter().map(|v| c * v).collect(),
        loss_trace: min.loss_trace,
        iterations: min.iterations,
        converged: min.converged,
        config: config.clone(),
        standardization: st,
        drift_weights: drift_w.iter().copied().collect(),
        sigma_weights: sigma_w.iter().copied().collect(),
    })
}

impl SdeFit {
    fn standardized_inputs(&self) -> DMatrix<f64> {
        let d = self.standardization.center.len();
        let raw = DMatrix::from_fn(self.x.len(), d, |i, j| self.x[i][j]);
        self.standardization.apply_points(&raw)
    }

    fn section(
        &self,
        kernel: &KernelSpec,
        weights: &[f64],
        points: &DMatrix<f64>,
    ) -> Result<Vec<f64>> {
        let d = self.standardization.center.len();
        if points.ncols() != d {
            return Err(Error::arg(format!("query points must have dimension {d}")));
        }
        if points.nrows() == 0 {
            return Ok(Vec::new());
        }
        let q = self.standardization.apply_points(points);
        let cross = gram(kernel, &q, &self.standardized_inputs())?;
        let w = DVector::from_column_slice(weights);
        let c = self.standardization.output_scale;
        Ok((cross * w).iter().map(|v| c * v).collect())
    }

    /// Drift estimate at each row of `points`.
    pub fn predict_f(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.section(&self.config.kernel_f, &self.drift_weights, points)
    }

    /// Diffusion estimate at each row of `points`.
    pub fn predict_sigma(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.section(&self.config.kernel_sigma, &self.sigma_weights, points)
    }

    /// CSV `x…, f_est, sigma_est` at each row of `points`.
    pub fn write_eval_csv<W: Write>(
        &self,
        points: &DMatrix<f64>,
        labels: &[String],
        w: W,
    ) -> Result<()> {
        if labels.len() != points.ncols() {
            return Err(Error::arg("one label per input column is required"));
        }
        let f = self.predict_f(points)?;
        let s = self.predict_sigma(points)?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = labels.to_vec();
        header.push("f_est".into());
        header.push("sigma_est".into());
        out.write_record(&header)?;
        for i in 0..points.nrows() {
            let mut row: Vec<String> = points.row(i).iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(f[i]));
            row.push(fmt_f64(s[i]));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::points_1d;

    fn small_problem() -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..12).map(|i| -1.0 + 0.19 * i as f64).collect();
        let x = points_1d(&xs);
        let k = gram_symmetric(&KernelSpec::rbf(0.3).unwrap(), &x).unwrap();
        let g = gram_symmetric(&KernelSpec::matern(0.5, 2.5).unwrap(), &x).unwrap();
        let dt: Vec<f64> = (0..12).map(|i| 0.01 + 0.001 * i as f64).collect();
        let y: Vec<f64> = xs
            .iter()
            .zip(&dt)
            .enumerate()
            .map(|(i, (x, d))| -x * d + 0.05 * d.sqrt() * ((i * 7 % 5) as f64 - 2.0) / 2.0)
            .collect();
        (k, g, dt, y)
    }

    #[test]
    fn zero_increments_give_zero_drift() {
        let (k, _, dt, _) = small_problem();
        let f = f_opt_closed_form(&k, &dt, &[0.01; 12], 1e-6, &[0.0; 12]).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_closed_form() {
        let (dt, s, lam, y) = (0.1, 0.3, 1e-3, 0.7);
        let k = DMatrix::from_element(1, 1, 1.0);
        let f = f_opt_closed_form(&k, &[dt], &[s], lam, &[y]).unwrap();
        let expected = dt * y / (dt * dt + s + lam);
        assert!((f[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn noise_free_euler_data_recovers_rate() {
        // Forward-Euler path of f(x) = -x: Y_n = f(X_n) Δt exactly.
        let dt = 0.05;
        let mut xs = vec![1.0];
        for _ in 0..19 {
            let x: f64 = *xs.last().unwrap();
            xs.push(x - x * dt);
        }
        let x = points_1d(&xs[..19]);
        let y: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let k = gram_symmetric(&KernelSpec::rbf(0.02).unwrap(), &x).unwrap();
        let dts = vec![dt; 19];
        let f = f_opt_closed_form(&k, &dts, &[0.0; 19], 1e-10, &y).unwrap();
        for (fi, yi) in f.iter().zip(&y) {
            assert!((fi - yi / dt).abs() <= 0.01 * (yi / dt).abs());
        }
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (fi, yi) in f.iter().zip(&y) {
            assert!((fi * dt - yi).abs() <= 1e-4 * ymax);
        }
    }

    #[test]
    fn loss_at_zero() {
        let (k, g, dt, _) = small_problem();
        let lam = 1e-6;
        let v = reduced_loss(&[0.0; 12], &k, &g, &dt, &[0.0; 12], lam, 1e-4).unwrap();
        assert!((v - 12.0 * lam.ln()).abs() < 1e-10);
    }

    #[test]
    fn loss_is_even_in_sigma() {
        let (k, g, dt, y) = small_problem();
        let loss = ReducedLoss::new(&k, &g, &dt, &y, 1e-6, 1e-4).unwrap();
        let s: Vec<f64> = (0..12).map(|i| 0.2 + 0.03 * i as f64).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(loss.value(&s).unwrap(), loss.value(&neg).unwrap());
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (k, g, dt, y) = small_problem();
        let loss = ReducedLoss::new(&k, &g, &dt, &y, 1e-6, 1e-4).unwrap();
        let s: Vec<f64> = (0..12).map(|i| 0.05 + 0.02 * i as f64).collect();
        let (_, grad) = loss.value_and_gradient(&s).unwrap();
        let fd = loss.fd_gradient(&s, 1e-6).unwrap();
        for (a, b) in grad.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn descent_decreases_loss() {
        let (k, g, dt, y) = small_problem();
        let loss = ReducedLoss::new(&k, &g, &dt, &y, 1e-6, 1e-4).unwrap();
        let init = initial_sigma(&y, &dt);
        let out = minimize_sigma(&loss, &GdConfig::default(), &init).unwrap();
        assert!(out.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
    }

    /// Four-term loss with explicit inverses; independent of the Woodbury path.
    fn direct_loss(
        k: &DMatrix<f64>,
        g: &DMatrix<f64>,
        dt: &[f64],
        y: &[f64],
        lam: f64,
        floor: f64,
        s: &[f64],
    ) -> f64 {
        let n = y.len();
        let sig = sigma_diagonal(s, dt);
        let f = f_opt_closed_form(k, dt, &sig, lam, y).unwrap();
        let yv = DVector::from_column_slice(y);
        let resid = &yv - DVector::from_fn(n, |i, _| dt[i] * f[i]);
        let data: f64 = (0..n).map(|i| resid[i] * resid[i] / (sig[i] + lam)).sum();
        let logs: f64 = sig.iter().map(|v| (v + lam).ln()).sum();
        let kinv_f = k.clone().cholesky().unwrap().solve(&f);
        let mut gt = g.clone();
        for i in 0..n {
            gt[(i, i)] += floor;
        }
        let sv = DVector::from_column_slice(s);
        let ginv_s = gt.cholesky().unwrap().solve(&sv);
        data + logs + f.dot(&kinv_f) + sv.dot(&ginv_s)
    }

    #[test]
    fn simplified_loss_matches_four_term_form() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.9).collect();
        let x = points_1d(&xs);
        let k = gram_symmetric(&KernelSpec::matern(0.5, 0.5).unwrap(), &x).unwrap();
        let g = gram_symmetric(&KernelSpec::rbf(1.0).unwrap(), &x).unwrap();
        let dt = vec![0.2; 8];
        let y: Vec<f64> = xs.iter().map(|v| 0.1 * v.sin()).collect();
        let loss = ReducedLoss::new(&k, &g, &dt, &y, 1e-3, 1e-2).unwrap();
        for scale in [0.1, 0.5, 2.0] {
            let s: Vec<f64> = (0..8).map(|i| scale * (1.0 + 0.1 * i as f64)).collect();
            let fast = loss.value(&s).unwrap();
            let slow = direct_loss(&k, &g, &dt, &y, 1e-3, 1e-2, &s);
            assert!(
                (fast - slow).abs() <= 1e-8 * (1.0 + slow.abs()),
                "{fast} vs {slow}"
            );
        }
    }

    #[test]
    fn zero_data_drives_sigma_to_zero() {
        let k = DMatrix::from_element(1, 1, 1.0);
        let loss = ReducedLoss::new(&k, &k, &[0.1], &[0.0], 1e-6, 1e-4).unwrap();
        let out = minimize_sigma(&loss, &GdConfig::default(), &[1.0]).unwrap();
        assert!(out.sigma_min[0] < 1e-3, "{:?}", out.sigma_min);
        assert!(out.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn smoothing_limits() {
        let x = points_1d(&[0.0, 1.0, 2.0, 3.0]);
        let g = gram_symmetric(&KernelSpec::rbf(0.3).unwrap(), &x).unwrap();
        let s = [0.3, 0.5, 0.4, 0.6];
        let tight = smooth_sigma(&g, 1e-12, &s).unwrap();
        for (a, b) in tight.iter().zip(&s) {
            assert!((a - b).abs() < 1e-6);
        }
        let loose = smooth_sigma(&g, 1e12, &s).unwrap();
        assert!(loose.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn smoothing_constant_on_cluster() {
        let x = points_1d(&[0.0, 0.01, 0.02, 0.03]);
        let g = gram_symmetric(&KernelSpec::rbf(1.0).unwrap(), &x).unwrap();
        let c = 0.4;
        let out = smooth_sigma(&g, 1e-2, &[c; 4]).unwrap();
        let mut a = g.clone();
        for i in 0..4 {
            a[(i, i)] += 1e-2;
        }
        let direct = &g * a.lu().solve(&DVector::from_element(4, c)).unwrap();
        for (o, d) in out.iter().zip(direct.iter()) {
            assert!((o - d).abs() < 1e-10);
        }
    }

    #[test]
    fn sections_agree_with_training_values() {
        let (_, _, dt, y) = small_problem();
        let xs: Vec<f64> = (0..12).map(|i| -1.0 + 0.19 * i as f64).collect();
        let x = points_1d(&xs);
        let kf = KernelSpec::rbf(0.3).unwrap();
        let ks = KernelSpec::rbf(0.5).unwrap();
        let sig: Vec<f64> = (0..12).map(|i| 0.4 + 0.01 * i as f64).collect();
        let k = gram_symmetric(&kf, &x).unwrap();
        let f = f_opt_closed_form(&k, &dt, &sigma_diagonal(&sig, &dt), 1e-6, &y).unwrap();
        let g = gram_symmetric(&ks, &x).unwrap();
        let smooth = smooth_sigma(&g, 1e-12, &sig).unwrap();
        for i in [0, 5, 11] {
            let fp = predict_f(&[xs[i]], &kf, &x, &dt, &sig, 1e-6, &y).unwrap();
            assert!((fp - f[i]).abs() < 1e-9 * (1.0 + f[i].abs()));
            let sp = predict_sigma(&[xs[i]], &ks, &x, 1e-12, &sig).unwrap();
            assert!((sp - smooth[i]).abs() < 1e-6);
        }
        let far = predict_sigma(&[50.0], &ks, &x, 1e-4, &sig).unwrap();
        assert!(far.abs() < 1e-12);
        let zero = predict_f(&[0.3], &kf, &x, &dt, &sig, 1e-6, &[0.0; 12]).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn query_errors() {
        let x = points_1d(&[0.0, 1.0]);
        let k = KernelSpec::rbf(1.0).unwrap();
        assert!(predict_sigma(&[f64::NAN], &k, &x, 1e-4, &[0.1, 0.1]).is_err());
        assert!(predict_sigma(&[0.0, 1.0], &k, &x, 1e-4, &[0.1, 0.1]).is_err());
        assert!(smooth_sigma(&DMatrix::identity(2, 2), 0.0, &[0.1, 0.1]).is_err());
        let (k, g, dt, y) = small_problem();
        let loss = ReducedLoss::new(&k, &g, &dt, &y, 1e-6, 1e-4).unwrap();
        assert!(loss.value(&[f64::NAN; 12]).is_err());
        assert!(loss.value(&[0.1; 3]).is_err());
    }

    #[test]
    fn initial_sigma_fallback_is_constant() {
        let y = [0.1, -0.2, 0.05];
        let init = initial_sigma(&y, &[0.01; 3]);
        assert!(init.iter().all(|v| *v == init[0] && *v > 0.0));
        let y: Vec<f64> = (0..12).map(|i| 0.01 * i as f64).collect();
        let init = initial_sigma(&y, &[0.1; 12]);
        assert_eq!(init.len(), 12);
        assert!(init.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
