//! Structured pass/fail reports for identity checks.

use serde::{Deserialize, Serialize};

/// One failing coefficient location inside a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Which sub-identity or relation instance failed.
    pub context: String,
    /// Exponent vector (or mode indices) where the mismatch sits.
    pub location: Vec<i64>,
    /// Human-readable detail: expected vs got.
    pub detail: String,
}

/// Outcome of a verification pass: overall flag plus every violation found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn passing() -> Self {
        CheckReport {
            pass: true,
            violations: Vec::new(),
        }
    }

    pub fn push(&mut self, context: impl Into<String>, location: Vec<i64>, detail: impl Into<String>) {
        self.pass = false;
        self.violations.push(Violation {
            context: context.into(),
            location,
            detail: detail.into(),
        });
    }

    pub fn merge(&mut self, other: CheckReport) {
        if !other.pass {
            self.pass = false;
            self.violations.extend(other.violations);
        }
    }
}

impl Default for CheckReport {
    fn default() -> Self {
        Self::passing()
    }
}
