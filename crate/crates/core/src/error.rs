use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::riccati::RiccatiPath;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("model-core: invalid market configuration: {0}")]
    InvalidMarket(String),

    #[error("model-core: invalid endowment: {0}")]
    InvalidEndowment(String),

    #[error("model-core: fundamental matrix singular at t = {t} (|det| = {det:e})")]
    FundamentalMatrixSingular { t: f64, det: f64 },

    #[error("model-core: ellipticity violated at t = {t}: eigenvalue {eigenvalue:e} outside [{lower:e}, {upper:e}]")]
    EllipticityViolated {
        t: f64,
        eigenvalue: f64,
        lower: f64,
        upper: f64,
    },

    #[error("model-core: Hölder estimate unavailable: {0}")]
    HolderResolution(String),

    #[error("sigma-kernel: covariance on [{t}, {s}] is not positive definite (min pivot {pivot:e}, diag ratio {ratio:e})")]
    NotPositiveDefinite { t: f64, s: f64, pivot: f64, ratio: f64 },

    #[error("sigma-kernel: evaluation time t = {t} must be < maturity {maturity}")]
    TimeOrder { t: f64, maturity: f64 },

    #[error("{context}: non-finite value encountered")]
    NonFinite { context: &'static str },

    #[error("picard-solver: no convergence after {iterations} iterations (last residual {last:e}); maturity is likely beyond the contraction scale, see t0_scaling_report")]
    PicardNotConverged {
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("riccati-solver: blow-up at time-to-maturity {t0} before horizon {horizon}")]
    RiccatiBlowUp {
        t0: f64,
        horizon: f64,
        path: Box<RiccatiPath>,
    },

    #[error("riccati-solver: endowment {0} is not quadratic")]
    NotQuadratic(usize),

    #[error("taylor-compare: {0}")]
    Compare(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    /// Solver failures (as opposed to bad input) map to exit code 2 in the CLI.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::PicardNotConverged { .. } | Error::RiccatiBlowUp { .. } | Error::Compare(_)
        )
    }
}
