//! Exact symbolic computation engine for formal-group associates, the
//! phi-coordinated vertex product, and the trigonometric/rational quantum
//! beta-gamma systems.
//!
//! Everything is computed over Q(q) (or rational specializations of q) with
//! explicit truncation bookkeeping: every series value knows the window on
//! which its coefficients are exact, and identities are only asserted on the
//! intersection of valid windows.

pub mod error;
pub mod scalars;
pub mod series;
pub mod associates;
pub mod fockrep;
pub mod eops;
pub mod report;

pub use error::{Error, Result};
