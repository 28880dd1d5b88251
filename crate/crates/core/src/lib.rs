//! Swing-equation dynamics driven by solar injection, Euler–Maruyama
//! simulation, kernel (Gaussian-process) state estimation, and joint
//! drift/diffusion recovery from sampled increments.

pub mod drift;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod report;
pub mod sde;
pub mod solar;

pub use drift::{fit_sde, EstimatorConfig, SdeFit};
pub use error::{Error, Result};
pub use gp::{cross_validate, CvReport, GpPosterior};
pub use kernels::KernelSpec;
pub use metrics::MetricReport;
pub use sde::{SdeSystem, Trajectory};
