//! View-decoupled MCQA benchmark harness for vehicle-side, infrastructure-side,
//! and cooperative driving evaluation, plus a desk-scale reference baseline with
//! hard-routed per-view low-rank adapter experts and calibration analysis.

pub mod clients;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod micromoe;
pub mod protocol;
pub mod taskbank;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
