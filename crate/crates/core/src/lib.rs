//! Federated learning security simulator for gridded temperature forecasting.

pub mod aggregation;
pub mod attacks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
