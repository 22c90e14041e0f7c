//! Localized non-intrusive reduced-basis modelling of parameterized crack problems.

pub mod classifier;
pub mod clustering;
pub mod error;
pub mod fom;
pub mod pod;
pub mod regression;
pub mod rom;
pub mod snapshot;
pub mod spline;
pub mod store;

pub use error::{Error, Result};
