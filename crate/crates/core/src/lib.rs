//! Evaluation of attribution maps by undoing adversarial perturbations, next to
//! the Deletion/Insertion family and the scalar AD/IIC/CP/CH/ADCC metrics.

pub mod analysis;
pub mod attacks;
pub mod attribution;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
