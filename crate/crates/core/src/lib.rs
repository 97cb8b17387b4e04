//! Needlet-based isotropy tests for directional data on the sphere.

pub mod error;
pub mod calibration;
pub mod catalog;
pub mod coverage;
pub mod density;
pub mod engine;
pub mod harmonics;
pub mod isotropy;
pub mod needlet;
pub mod power;
pub mod simulate;
pub mod sphere;

pub use error::{Error, Result};
