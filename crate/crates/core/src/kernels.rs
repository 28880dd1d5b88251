//! Covariance functions and Gram matrices.
//!
//! Every kernel is a function of the Euclidean distance `r = ‖x − x′‖` and has
//! unit value at `r = 0`. Point sets are matrices with one point per row.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matérn smoothness values with closed forms.
pub const MATERN_NUS: [f64; 3] = [0.5, 1.5, 2.5];

/// Kernel family plus its hyperparameters.
///
/// Build through the constructors or deserialize from JSON; both paths
/// validate. Variants constructed by hand are validated on every [`eval`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum KernelSpec {
    Rbf {
        length_scale: f64,
    },
    Matern {
        length_scale: f64,
        nu: f64,
    },
    RationalQuadratic {
        length_scale: f64,
        alpha: f64,
    },
    Periodic {
        length_scale: f64,
        period: f64,
    },
    /// Unweighted sum of non-ensemble members.
    Ensemble {
        members: Vec<KernelSpec>,
    },
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum KernelRepr {
    Rbf { length_scale: f64 },
    Matern { length_scale: f64, nu: f64 },
    RationalQuadratic { length_scale: f64, alpha: f64 },
    Periodic { length_scale: f64, period: f64 },
    Ensemble { members: Vec<KernelSpec> },
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(repr: KernelRepr) -> Result<Self> {
        let spec = match repr {
            KernelRepr::Rbf { length_scale } => KernelSpec::Rbf { length_scale },
            KernelRepr::Matern { length_scale, nu } => KernelSpec::Matern { length_scale, nu },
            KernelRepr::RationalQuadratic {
                length_scale,
                alpha,
            } => KernelSpec::RationalQuadratic {
                length_scale,
                alpha,
            },
            KernelRepr::Periodic {
                length_scale,
                period,
            } => KernelSpec::Periodic {
                length_scale,
                period,
            },
            KernelRepr::Ensemble { members } => KernelSpec::Ensemble { members },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(spec: KernelSpec) -> Self {
        match spec {
            KernelSpec::Rbf { length_scale } => KernelRepr::Rbf { length_scale },
            KernelSpec::Matern { length_scale, nu } => KernelRepr::Matern { length_scale, nu },
            KernelSpec::RationalQuadratic {
                length_scale,
                alpha,
            } => KernelRepr::RationalQuadratic {
                length_scale,
                alpha,
            },
            KernelSpec::Periodic {
                length_scale,
                period,
            } => KernelRepr::Periodic {
                length_scale,
                period,
            },
            KernelSpec::Ensemble { members } => KernelRepr::Ensemble { members },
        }
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

impl KernelSpec {
    pub fn rbf(length_scale: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { length_scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn matern(length_scale: f64, nu: f64) -> Result<Self> {
        let spec = KernelSpec::Matern { length_scale, nu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rational_quadratic(length_scale: f64, alpha: f64) -> Result<Self> {
        let spec = KernelSpec::RationalQuadratic {
            length_scale,
            alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn periodic(length_scale: f64, period: f64) -> Result<Self> {
        let spec = KernelSpec::Periodic {
            length_scale,
            period,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ensemble(members: Vec<KernelSpec>) -> Result<Self> {
        let spec = KernelSpec::Ensemble { members };
        spec.validate()?;
        Ok(spec)
    }

    /// RBF plus periodic, the ensemble used throughout the experiments.
    pub fn rbf_plus_periodic(rbf_length: f64, periodic_length: f64, period: f64) -> Result<Self> {
        Self::ensemble(vec![
            Self::rbf(rbf_length)?,
            Self::periodic(periodic_length, period)?,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Rbf { length_scale } => check_positive("length_scale", *length_scale),
            KernelSpec::Matern { length_scale, nu } => {
                check_positive("length_scale", *length_scale)?;
                check_positive("nu", *nu)?;
                if MATERN_NUS.contains(nu) {
                    Ok(())
                } else {
                    Err(Error::arg(format!(
                        "matern nu must be one of {MATERN_NUS:?}, got {nu}"
                    )))
                }
            }
            KernelSpec::RationalQuadratic {
                length_scale,
                alpha,
            } => {
                check_positive("length_scale", *length_scale)?;
                check_positive("alpha", *alpha)
            }
            KernelSpec::Periodic {
                length_scale,
                period,
            } => {
                check_positive("length_scale", *length_scale)?;
                check_positive("period", *period)
            }
            KernelSpec::Ensemble { members } => {
                if members.len() < 2 {
                    return Err(Error::arg("ensemble needs at least two members"));
                }
                for member in members {
                    if matches!(member, KernelSpec::Ensemble { .. }) {
                        return Err(Error::arg("ensemble members cannot be ensembles"));
                    }
                    member.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Short family tag, matching the JSON `family` field.
    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Matern { .. } => "matern",
            KernelSpec::RationalQuadratic { .. } => "rational_quadratic",
            KernelSpec::Periodic { .. } => "periodic",
            KernelSpec::Ensemble { .. } => "ensemble",
        }
    }

    /// k(x, x): 1 for every single family, the member count for an ensemble.
    pub fn diagonal(&self) -> f64 {
        match self {
            KernelSpec::Ensemble { members } => members.iter().map(KernelSpec::diagonal).sum(),
            _ => 1.0,
        }
    }

    /// Kernel value as a function of distance. Assumes a validated spec.
    pub fn eval_distance(&self, r: f64) -> f64 {
        match *self {
            KernelSpec::Rbf { length_scale } => {
                let u = r / length_scale;
                (-0.5 * u * u).exp()
            }
            KernelSpec::Matern { length_scale, nu } => matern(r / length_scale, nu),
            KernelSpec::RationalQuadratic {
                length_scale,
                alpha,
            } => {
                let u = r / length_scale;
                (1.0 + u * u / (2.0 * alpha)).powf(-alpha)
            }
            KernelSpec::Periodic {
                length_scale,
                period,
            } => {
                let s = (PI * r / period).sin();
                (-2.0 * s * s / (length_scale * length_scale)).exp()
            }
            KernelSpec::Ensemble { ref members } => {
                members.iter().map(|m| m.eval_distance(r)).sum()
            }
        }
    }
}

fn matern(u: f64, nu: f64) -> f64 {
    if nu == 0.5 {
        (-u).exp()
    } else if nu == 1.5 {
        let a = 3f64.sqrt() * u;
        (1.0 + a) * (-a).exp()
    } else {
        let a = 5f64.sqrt() * u;
        (1.0 + a + a * a / 3.0) * (-a).exp()
    }
}

pub fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// k(x, x′) for a single pair of points.
pub fn eval(spec: &KernelSpec, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != x_prime.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            x_prime.len()
        )));
    }
    if x.iter().chain(x_prime).any(|v| !v.is_finite()) {
        return Err(Error::arg("kernel inputs must be finite"));
    }
    Ok(spec.eval_distance(distance(x, x_prime)))
}

fn check_points(name: &str, points: &DMatrix<f64>) -> Result<()> {
    if points.nrows() == 0 || points.ncols() == 0 {
        return Err(Error::arg(format!("{name} is empty")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Gram matrix with entry (i, j) = k(X_i, X′_j).
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>, x_prime: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_points("X", x)?;
    check_points("X'", x_prime)?;
    if x.ncols() != x_prime.ncols() {
        return Err(Error::arg(format!(
            "point dimension mismatch: {} vs {}",
            x.ncols(),
            x_prime.ncols()
        )));
    }
    let d = x.ncols();
    let mut out = DMatrix::zeros(x.nrows(), x_prime.nrows());
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for i in 0..x.nrows() {
        for (k, v) in a.iter_mut().enumerate() {
            *v = x[(i, k)];
        }
        for j in 0..x_prime.nrows() {
            for (k, v) in b.iter_mut().enumerate() {
                *v = x_prime[(j, k)];
            }
            out[(i, j)] = spec.eval_distance(distance(&a, &b));
        }
    }
    Ok(out)
}

/// K(X, X), filled from the lower triangle so the result is exactly symmetric.
pub fn gram_symmetric(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_points("X", x)?;
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let diag = spec.diagonal();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = diag;
        for j in 0..i {
            let v = spec.eval_distance(distance(&rows[i], &rows[j]));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Column of scalar inputs as an n×1 point set.
pub fn points_1d(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> [f64; 1] {
        [v]
    }

    #[test]
    fn rbf_reference_values() {
        let k = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(eval(&k, &p(0.3), &p(0.3)).unwrap(), 1.0);
        let v = eval(&k, &p(0.0), &p(1.0)).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn matern_half_is_exponential() {
        let k = KernelSpec::matern(1.0, 0.5).unwrap();
        for r in [0.1, 1.0, 3.0] {
            let v = eval(&k, &p(0.0), &p(r)).unwrap();
            assert!((v - (-r).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn matern_rejects_other_nu() {
        assert!(KernelSpec::matern(1.0, 1.0).is_err());
        assert!(KernelSpec::matern(1.0, 3.5).is_err());
    }

    #[test]
    fn periodic_full_period() {
        let k = KernelSpec::periodic(1.0, 1.0).unwrap();
        let v = eval(&k, &p(0.0), &p(1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ensemble_diagonal_is_two() {
        let k = KernelSpec::rbf_plus_periodic(1.0, 1.0, 1.0).unwrap();
        assert_eq!(eval(&k, &p(2.0), &p(2.0)).unwrap(), 2.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::rbf(-1.0).is_err());
        assert!(KernelSpec::rational_quadratic(1.0, 0.0).is_err());
        assert!(KernelSpec::periodic(1.0, f64::NAN).is_err());
        assert!(KernelSpec::ensemble(vec![KernelSpec::rbf(1.0).unwrap()]).is_err());
        let inner = KernelSpec::rbf_plus_periodic(1.0, 1.0, 1.0).unwrap();
        assert!(KernelSpec::ensemble(vec![inner, KernelSpec::rbf(1.0).unwrap()]).is_err());
    }

    #[test]
    fn eval_argument_errors() {
        let k = KernelSpec::rbf(1.0).unwrap();
        assert!(eval(&k, &[0.0, 1.0], &[0.0]).is_err());
        assert!(eval(&k, &[f64::INFINITY], &[0.0]).is_err());
        let bad = KernelSpec::Rbf { length_scale: -2.0 };
        assert!(eval(&bad, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn gram_two_points() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let x = points_1d(&[0.0, 1.0]);
        let g = gram(&k, &x, &x).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        assert!((g[(0, 1)] - e).abs() < 1e-15);
        assert!((g[(1, 0)] - e).abs() < 1e-15);
    }

    #[test]
    fn gram_single_point() {
        let k = KernelSpec::rbf_plus_periodic(0.5, 2.0, 3.0).unwrap();
        let x = points_1d(&[0.7]);
        let g = gram(&k, &x, &x).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 2.0);
    }

    #[test]
    fn gram_errors() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let empty = DMatrix::<f64>::zeros(0, 1);
        let x = points_1d(&[0.0]);
        assert!(gram(&k, &empty, &x).is_err());
        let x2 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(gram(&k, &x, &x2).is_err());
    }

    #[test]
    fn json_round_trip_and_tags() {
        let k = KernelSpec::rbf_plus_periodic(1.0, 0.5, 2.0).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains(r#""family":"ensemble""#));
        assert!(s.contains(r#""family":"rbf""#));
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);

        let parsed: KernelSpec =
            serde_json::from_str(r#"{"family": "rbf", "length_scale": 1.0}"#).unwrap();
        assert_eq!(parsed, KernelSpec::rbf(1.0).unwrap());
        assert!(
            serde_json::from_str::<KernelSpec>(r#"{"family":"rbf","length_scale":-1}"#).is_err()
        );
        assert!(serde_json::from_str::<KernelSpec>(
            r#"{"family":"matern","length_scale":1,"nu":2}"#
        )
        .is_err());
    }
}
