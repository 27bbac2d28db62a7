use thiserror::Error;

/// Errors shared across the whole engine.
///
/// Check failures are *not* errors: they are reported as data in a
/// [`crate::report::CheckReport`]. Errors signal that a computation could not
/// be carried out at all (bad input, exhausted precision, escaped window).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("division by zero")]
    DivisionByZero,

    #[error("denominator vanishes at q = {0}")]
    PoleAtSpecialization(String),

    #[error("variable mismatch: expected {expected}, got {got}")]
    VariableMismatch { expected: String, got: String },

    #[error("rational expression is not expandable in the requested direction: {0}")]
    ExpansionDirectionError(String),

    #[error("ill-founded series composition: {0}")]
    CompositionError(String),

    #[error("series is not an associate base: {0}")]
    NotAnAssociateBase(String),

    #[error("x-precision exhausted: {0}")]
    PrecisionExhausted(String),

    #[error("inconsistent truncation policy: {0}")]
    PolicyError(String),

    #[error("result escapes the truncation window: {0}")]
    WindowEscape(String),

    #[error("no multiplier candidate certifies the pair within the window")]
    NoMultiplierFound,

    #[error("multiplier has not been certified for this pair: {0}")]
    UncertifiedMultiplier(String),

    #[error("parse error at byte {offset}: {message}")]
    ParseError { offset: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
