//! Difference-in-differences and lagged-dependent-variable estimation for
//! the two-period two-group panel design, with diagnostics that predict
//! which of the two estimates bounds the other, bootstrap inference, and
//! Monte Carlo validation.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod report;
pub mod simulate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
