use thiserror::Error;

/// Errors raised by every module. Numeric payloads are widened to `f64`.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: String, reason: String },

    #[error("radius {r} exceeds the materialized range (max |t| = {max})")]
    Range { r: f64, max: f64 },

    #[error("|A(z)| overflows at z = {re}{im:+}i; use log_abs_eval")]
    Overflow { re: f64, im: f64 },

    #[error("z = {re}{im:+}i lies within {distance:e} of node {node}")]
    Proximity { re: f64, im: f64, node: f64, distance: f64 },

    #[error("nodes {left} and {right} are numerically coincident")]
    Degenerate { left: f64, right: f64 },

    #[error("tail sum diverges: {0}")]
    Divergent(String),

    #[error("need at least {needed} materialized terms on the {side} side, got {got}")]
    Insufficient { side: String, needed: usize, got: usize },

    #[error("point {0} is not a member of the spectrum")]
    Membership(f64),

    #[error("refused: {0}")]
    Refused(String),

    #[error("unsupported closed form: {0}")]
    ClosedForm(String),

    #[error("ill-conditioned evaluation: {0}")]
    Conditioning(String),

    #[error("extrapolation did not converge: {0}")]
    Extrapolation(String),

    #[error("contour passes too close to a zero (min |f| = {min_abs:e} at {re}{im:+}i)")]
    Contour { min_abs: f64, re: f64, im: f64 },

    #[error("resolution limit reached: {0}")]
    Resolution(String),

    #[error("data does not match the required pattern: {0}")]
    Pattern(String),

    #[error("section size {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("materialization exhausted: {0}")]
    Materialization(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("no bracket found: {0}")]
    Bracket(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::Parameter { field: field.to_string(), reason: reason.into() }
    }

    /// True for input-validation failures, false for numerical ones.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parameter { .. } | Error::Range { .. } | Error::Membership(_) | Error::TooLarge { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
