//! Gaussian-process regression with a zero prior mean,
//! plus seeded k-fold cross-validation over a kernel grid.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, KernelSpec};
use crate::linalg::{JitterLadder, RegularizedCholesky};

/// Fitted regressor. Immutable after [`fit`].
#[derive(Clone, Debug)]
pub struct GpPosterior {
    kernel: KernelSpec,
    x_train: DMatrix<f64>,
    noise: f64,
    chol: RegularizedCholesky,
    dual_weights: DVector<f64>,
}

/// Fit with the default jitter ladder.
pub fn fit(kernel: &KernelSpec, x: &DMatrix<f64>, y: &[f64], noise: f64) -> Result<GpPosterior> {
    fit_with_ladder(kernel, x, y, noise, &JitterLadder::default())
}

pub fn fit_with_ladder(
    kernel: &KernelSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    noise: f64,
    ladder: &JitterLadder,
) -> Result<GpPosterior> {
    if x.nrows() == 0 {
        return Err(Error::arg("no training points"));
    }
    if x.nrows() != y.len() {
        return Err(Error::arg(format!(
            "{} training inputs but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::arg(format!(
            "noise variance must be >= 0, got {noise}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("targets must be finite"));
    }
    let k = gram_symmetric(kernel, x)?;
    let chol = RegularizedCholesky::new(&k, noise, ladder)?;
    let dual_weights = chol.solve(&DVector::from_column_slice(y));
    Ok(GpPosterior {
        kernel: kernel.clone(),
        x_train: x.clone(),
        noise,
        chol,
        dual_weights,
    })
}

impl GpPosterior {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Jitter added on top of the noise variance to make the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    /// Lower Cholesky factor of K(X, X) + (noise + jitter)·I.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn dual_weights(&self) -> &DVector<f64> {
        &self.dual_weights
    }

    fn cross_gram(&self, x_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_star.ncols() != self.x_train.ncols() {
            return Err(Error::arg(format!(
                "prediction inputs have dimension {}, training inputs {}",
                x_star.ncols(),
                self.x_train.ncols()
            )));
        }
        gram(&self.kernel, x_star, &self.x_train)
    }

    pub fn predict_mean(&self, x_star: &DMatrix<f64>) -> Result<DVector<f64>> {
        let ks = self.cross_gram(x_star)?;
        Ok(ks * &self.dual_weights)
    }

    /// Posterior variance before clamping; may dip slightly below zero.
    pub fn predict_var_raw(&self, x_star: &DMatrix<f64>) -> Result<DVector<f64>> {
        let ks = self.cross_gram(x_star)?;
        let prior = self.kernel.diagonal();
        let mut out = DVector::zeros(ks.nrows());
        for i in 0..ks.nrows() {
            let v = self.chol.solve_lower(&ks.row(i).transpose());
            out[i] = prior - v.norm_squared();
        }
        Ok(out)
    }

    pub fn predict_var(&self, x_star: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.predict_var_raw(x_star)?.map(|v| v.max(0.0)))
    }
}

/// Outcome of [`cross_validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: Vec<KernelSpec>,
    /// Mean held-out MSE per candidate; `+inf` when a fit failed.
    #[serde(with = "nonfinite_vec")]
    pub fold_errors: Vec<f64>,
    pub chosen: usize,
    pub folds: usize,
    pub seed: u64,
}

impl CvReport {
    pub fn chosen_kernel(&self) -> &KernelSpec {
        &self.grid[self.chosen]
    }
}

// JSON has no infinity; failed candidates are written as null.
mod nonfinite_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opts.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opts = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opts
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}

/// Seeded permutation of `0..n` split into `folds` contiguous near-equal parts.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    (0..folds)
        .map(|f| idx[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect()
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn held_out_mse(
    kernel: &KernelSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    folds: &[Vec<usize>],
    noise: f64,
) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for held in folds {
        let mut is_held = vec![false; n];
        for &i in held {
            is_held[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|i| !is_held[*i]).collect();
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let gp = match fit(kernel, &select_rows(x, &train), &y_train, noise) {
            Ok(gp) => gp,
            Err(_) => return f64::INFINITY,
        };
        let pred = match gp.predict_mean(&select_rows(x, held)) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let sse: f64 = held
            .iter()
            .zip(pred.iter())
            .map(|(&i, p)| (y[i] - p).powi(2))
            .sum();
        total += sse / held.len() as f64;
    }
    let mean = total / folds.len() as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}

/// k-fold cross-validation; the winner is the lowest mean held-out MSE, ties
/// going to the lower grid index.
pub fn cross_validate(
    candidates: &[KernelSpec],
    x: &DMatrix<f64>,
    y: &[f64],
    folds: usize,
    seed: u64,
    noise: f64,
) -> Result<CvReport> {
    if candidates.is_empty() {
        return Err(Error::arg("no candidate kernels"));
    }
    if folds < 2 {
        return Err(Error::arg("cross-validation needs at least 2 folds"));
    }
    if y.len() < folds {
        return Err(Error::arg(format!(
            "{} samples cannot be split into {folds} folds",
            y.len()
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::arg("inputs and targets differ in length"));
    }
    let parts = fold_assignment(y.len(), folds, seed);
    let fold_errors: Vec<f64> = candidates
        .iter()
        .map(|k| held_out_mse(k, x, y, &parts, noise))
        .collect();
    let mut chosen = 0;
    for (i, e) in fold_errors.iter().enumerate() {
        if *e < fold_errors[chosen] {
            chosen = i;
        }
    }
    Ok(CvReport {
        grid: candidates.to_vec(),
        fold_errors,
        chosen,
        folds,
        seed,
    })
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// Default length-scale grid: 13 log-spaced values on [0.01, 10].
pub fn default_length_scales() -> Vec<f64> {
    log_spaced(0.01, 10.0, 13)
}
