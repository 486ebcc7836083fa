use thiserror::Error;

use crate::symbols::Fiber;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("symbol coefficient is identically zero")]
    DegenerateSymbol,

    #[error("not of real principal type: a_{fiber}({x}) = 0 with |a'| = {derivative:e}")]
    NotPrincipalType { fiber: Fiber, x: f64, derivative: f64 },

    #[error("({x}, {fiber}) is not characteristic: |a| = {value:e}")]
    NotCharacteristic { fiber: Fiber, x: f64, value: f64 },

    #[error("all derivatives up to order {k_max} vanish at x = {x}")]
    OrderOverflow { x: f64, k_max: usize },

    #[error("unsupported order m = {m}")]
    UnsupportedOrder { m: f64 },

    #[error("step size underflow at t = {t}, state (x, xi) = ({x}, {xi})")]
    Stiffness { t: f64, x: f64, xi: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("separation fails on fiber {fiber}: {first} and {second} ({reason})")]
    Separation { fiber: Fiber, first: f64, second: f64, reason: String },

    #[error("estimate fails: constant {constant} at (x, xi) = ({x}, {xi})")]
    EstimateFailure { constant: f64, x: f64, xi: f64 },

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("kappa = {kappa} violates {reason}")]
    Kappa { kappa: f64, reason: String },

    #[error("order violation: {0}")]
    OrderViolation(String),

    #[error("resolution too low: {0}")]
    Resolution(String),

    #[error("inconclusive fit (R^2 = {r_squared:.4}): {context}")]
    InconclusiveFit { r_squared: f64, context: String },

    #[error("recurrence breakdown at k = {k}")]
    RecurrenceBreakdown { k: i64 },

    #[error("eigensolver failure: {0}")]
    Eigen(String),
}
