//! Critical points, closed-form Hessian spectra, orbit transport and gradient
//! flow for the two-factor objective J(W, S) = 1/2 ||X - WS||_F^2.
//!
//! All constructions work in an oriented frame where X is m x n with m <= n;
//! see [`model::DataMatrixSvd`].

pub mod calculus;
pub mod canonical;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod orbit;
pub mod sampling;
pub mod spectrum;
pub mod verify;

pub use error::{Error, Result};
pub use model::{evaluate_j, DataMatrixSvd, FactorPair, TangentPair, DEFAULT_RANK_TOL};
