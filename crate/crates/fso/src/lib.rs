//! Multi-aperture free-space-optical receiver simulator and estimator suite.
//!
//! The crate models a lens-array receiver with quad photodetectors behind
//! each lens: Gaussian-beam pointing gains, angle-of-arrival cell splitting,
//! Gamma-Gamma turbulence, and block-averaged shot/thermal noise. On top of
//! the simulator sit three estimators for the joint channel parameters
//! (transmitter pointing error, receiver jitter, angle of arrival, per-lens
//! fades): an exhaustive grid-search MAP solver, a three-stage hierarchical
//! MLP pipeline, and a single end-to-end MLP baseline.

pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod mlp;
pub mod report;
pub mod special;

pub use config::SystemConfig;
pub use error::{Error, Result};
