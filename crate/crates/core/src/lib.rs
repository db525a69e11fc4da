//! Bayesian learning rule (BLR) over exponential-family candidates.
//!
//! The crate is organised bottom-up:
//!
//! * [`expfam`] - candidate distributions in natural / expectation coordinates,
//! * [`estimators`] - delta-method, Monte-Carlo and surrogate estimates of the
//!   gradient and Hessian ingredients of the natural gradient,
//! * [`blr`] - the update rule itself, its momentum / mirror-descent / site forms
//!   and the fixed-point residual,
//! * [`optimizers`] - named presets (GD, Newton, OGN, VOGN, BayesBiNN, ...)
//!   behind a common [`optimizers::Optimizer`] trait and a name registry,
//! * [`conjugate`] - conjugate Bayes, ridge, EM and SVI for a two-component GMM,
//! * [`problems`] - objectives and synthetic datasets.

pub mod blr;
pub mod conjugate;
pub mod error;
pub mod estimators;
pub mod expfam;
pub mod linalg;
pub mod optimizers;
pub mod problems;
pub mod quadrature;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
