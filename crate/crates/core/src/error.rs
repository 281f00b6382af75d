use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{name} = {value} violates {bound}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        bound: &'static str,
    },

    #[error("{what} = {value} lies outside [{lower}, {upper}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("total mass is zero")]
    ZeroMass,

    #[error("step size underflow at t = {t} (h = {step})")]
    StepSizeUnderflow { t: f64, step: f64, state: Vec<f64> },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps {
        t: f64,
        max_steps: usize,
        state: Vec<f64>,
    },

    #[error("non-finite right-hand side for component {index} at t = {t}")]
    NonFinite { index: usize, t: f64 },

    #[error("particle {index} has negative mass {value} at t = {t}")]
    NegativeMass { index: usize, t: f64, value: f64 },

    #[error("branch polynomials are inconsistent at S = {s}: {reason}")]
    InvalidBranches { s: f64, reason: String },

    #[error("calibration failed at S = {s}, x0 = {x0}, Z0 = {z0}: {source}")]
    Calibration {
        s: f64,
        x0: f64,
        z0: f64,
        source: Box<Error>,
    },
}
