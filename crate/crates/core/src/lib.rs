//! Unknown-input decoupled filtering and autocovariance least-squares (ALS)
//! noise-covariance estimation for linear Gaussian systems, with rank
//! diagnostics and constructive null-space witnesses showing that `Q` and
//! `R` cannot be uniquely identified when the plant has a feedthrough
//! unknown input.
//!
//! Pipeline: [`system`] validation, [`structural`] strong-detectability
//! checks, [`filter`] gain design and recursion, [`dynamics`] for the
//! innovation error model and analytic autocovariances, [`als`] for the
//! regression and its solvers, [`identifiability`] for ranks and witnesses,
//! and [`simulation`] for synthetic data.

pub mod als;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod identifiability;
pub mod io;
pub mod linalg;
mod optimize;
pub mod simulation;
pub mod structural;
pub mod system;

pub use error::{Error, Result};
