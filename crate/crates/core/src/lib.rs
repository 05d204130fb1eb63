//! Perturbation-based attribution for black-box image classifiers.

pub mod attribution;
pub mod codec;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod masking;
pub mod model;
pub mod perturbation;
pub mod sampling;
pub mod segmentation;
pub mod types;

pub use error::{Error, Result};
