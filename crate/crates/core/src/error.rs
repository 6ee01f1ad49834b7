use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered ({0})")]
    NumericOverflow(String),

    #[error("step size underflow at t = {t} (h = {h})")]
    StiffnessFailure { t: f64, h: f64 },

    #[error("trajectory reached the origin at t = {0}")]
    OriginReached(f64),

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    #[error("invalid trigger threshold c = {0}")]
    InvalidThreshold(f64),

    #[error("weight singularity: xi + r_{index} = 0")]
    WeightSingularity { index: usize },

    #[error("vector field vanishes at sample point {0:?}")]
    SamplePointDegenerate(Vec<f64>),

    #[error("field is not homogeneous: residual {residual:e} at {point:?}")]
    Inconsistent { point: Vec<f64>, residual: f64 },

    #[error("quadrature did not converge (estimated error {0:e})")]
    QuadratureFailure(f64),

    #[error("maximization region is empty")]
    EmptyRegion,

    #[error("field is not polynomial: {0}")]
    NotPolynomial(String),

    #[error("lambda must be positive, got {0}")]
    InvalidLambda(f64),

    #[error("trajectory evaluated outside [{t0}, {t1}] at t = {t}")]
    OutOfRange { t: f64, t0: f64, t1: f64 },

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(what.to_string()))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
