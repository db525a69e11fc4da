//! Experiment runner, trace comparison and invariant verification for blrkit.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod problem;
pub mod verify;
