//! Regularized Cholesky solves and low-rank kernel factors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitters tried in order until a factorization succeeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterLadder(pub Vec<f64>);

impl Default for JitterLadder {
    fn default() -> Self {
        JitterLadder(vec![0.0, 1e-10, 1e-8, 1e-6, 1e-4])
    }
}

impl JitterLadder {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::arg("jitter ladder is empty"));
        }
        if steps.iter().any(|j| !j.is_finite() || *j < 0.0) {
            return Err(Error::arg(
                "jitter ladder entries must be finite and nonnegative",
            ));
        }
        Ok(JitterLadder(steps))
    }

    pub fn steps(&self) -> &[f64] {
        &self.0
    }
}

/// Cholesky factor of `A + (shift + jitter)·I` and the jitter that was needed.
#[derive(Clone, Debug)]
pub struct RegularizedCholesky {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

// Pivots below this fraction of the largest diagonal entry are treated as a
// failed factorization.
const MIN_PIVOT_RATIO: f64 = 1e-14;

fn try_cholesky(a: &DMatrix<f64>, diag_add: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += diag_add;
    }
    let max_diag = m.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if !min_pivot.is_finite() || min_pivot <= MIN_PIVOT_RATIO * max_diag {
        return None;
    }
    Some(chol)
}

impl RegularizedCholesky {
    /// Factor `a + (shift + j)·I` for the first ladder entry `j` that works.
    pub fn new(a: &DMatrix<f64>, shift: f64, ladder: &JitterLadder) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::arg(format!("matrix is not square: {:?}", a.shape())));
        }
        if a.nrows() == 0 {
            return Err(Error::arg("matrix is empty"));
        }
        if a.iter().any(|v| !v.is_finite()) || !shift.is_finite() {
            return Err(Error::arg("matrix contains non-finite values"));
        }
        for &jitter in ladder.steps() {
            if let Some(chol) = try_cholesky(a, shift + jitter) {
                return Ok(RegularizedCholesky { chol, jitter });
            }
        }
        Err(Error::Factorization {
            ladder: ladder.steps().to_vec(),
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// L⁻¹ b.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn ln_determinant(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Solve `(A + j·I) x = b` with the smallest ladder jitter `j` that factorizes.
pub fn regularized_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ladder: &JitterLadder,
) -> Result<DVector<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::arg(format!(
            "rhs length {} does not match matrix size {}",
            b.len(),
            a.nrows()
        )));
    }
    Ok(RegularizedCholesky::new(a, 0.0, ladder)?.solve(b))
}

/// Greedy pivoted Cholesky: `A ≈ F·Fᵀ` with `F` of shape n×r.
///
/// Stops once the largest remaining diagonal of the Schur complement drops to
/// `rel_tol · max(diag A)` or the rank reaches `max_rank`.
pub fn pivoted_cholesky(a: &DMatrix<f64>, rel_tol: f64, max_rank: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut residual: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let max_diag = residual.iter().fold(0.0f64, |m, v| m.max(*v));
    let stop = rel_tol * max_diag;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let limit = max_rank.min(n);
    while cols.len() < limit {
        let (pivot, &best) = residual
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        if best <= stop || best <= 0.0 {
            break;
        }
        let root = best.sqrt();
        let mut col = vec![0.0; n];
        for (i, c) in col.iter_mut().enumerate() {
            let mut v = a[(i, pivot)];
            for prev in &cols {
                v -= prev[i] * prev[pivot];
            }
            *c = v / root;
        }
        col[pivot] = root;
        for (r, c) in residual.iter_mut().zip(&col) {
            *r -= c * c;
        }
        residual[pivot] = 0.0;
        cols.push(col);
    }
    let r = cols.len();
    DMatrix::from_fn(n, r, |i, j| cols[j][i])
}

/// Orthonormal eigenbasis of a PSD matrix given through a factor `F` (`A ≈ F·Fᵀ`).
///
/// Returns `(V, μ)` with `A ≈ V·diag(μ)·Vᵀ`, dropping directions with
/// `μ ≤ rel_tol · max μ`.
pub fn factor_eigen(f: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, Vec<f64>) {
    if f.ncols() == 0 {
        return (DMatrix::zeros(f.nrows(), 0), Vec::new());
    }
    let small = f.transpose() * f;
    let eig = SymmetricEigen::new(small);
    let max_mu = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > rel_tol * max_mu && eig.eigenvalues[i] > 0.0)
        .collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut v = DMatrix::zeros(f.nrows(), keep.len());
    let mut mu = Vec::with_capacity(keep.len());
    for (out, &i) in keep.iter().enumerate() {
        let m = eig.eigenvalues[i];
        let col = f * eig.eigenvectors.column(i) / m.sqrt();
        v.set_column(out, &col);
        mu.push(m);
    }
    (v, mu)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}
