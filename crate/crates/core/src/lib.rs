//! Truncated functional linear regression.
//!
//! Fits `Y = a + ∫_0^θ b(t) X(t) dt + ε` with the truncation point `θ`
//! unknown, either jointly with `(a, b)` ([`truncated::fit_method_a`]) or by
//! truncating an untruncated pilot fit ([`truncated::fit_method_b`]). The
//! penalty weight is chosen by reconstructing a low-dimensional parametric
//! surrogate of the slope ([`tuning`]).

pub mod bootstrap;
pub mod error;
pub mod flm;
pub mod fpca;
pub mod io;
pub mod numerics;
pub mod simstudy;
pub mod truncated;
pub mod tuning;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use fpca::{CurveSet, EigenSystem};
pub use numerics::Grid;
