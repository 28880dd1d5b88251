//! MSE, MAE and R² scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    /// `None` when `y_true` is constant and R² is undefined.
    pub r2: Option<f64>,
    pub n: usize,
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len();
    if n < 2 {
        return Err(Error::arg("at least two samples are needed for R²"));
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(Error::arg("metrics inputs must be finite"));
    }
    let nf = n as f64;
    let (mut ss_res, mut abs_sum) = (0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = t - p;
        ss_res += e * e;
        abs_sum += e.abs();
    }
    let mean = y_true.iter().sum::<f64>() / nf;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(MetricReport {
        mse: ss_res / nf,
        mae: abs_sum / nf,
        r2,
        n,
    })
}
