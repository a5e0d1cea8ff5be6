//! Two-phase ERP classification: dataset handling, preprocessing, EEGNet /
//! Conformer models, leave-one-subject-out training, per-subject
//! calibration and gradient attribution.

mod bytes;
pub mod attribution;
pub mod calibrate;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod loss;
pub mod metrics;
mod error;
pub mod models;
pub mod preprocess;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
