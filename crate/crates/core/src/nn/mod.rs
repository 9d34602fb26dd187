//! Minimal differentiable CNN engine.

pub mod arch;
pub mod gradcheck;
mod image;
pub mod layers;
mod model;
pub mod serialize;
mod tensor;
pub mod train;

pub use image::Image8;
pub use model::{ClassProbe, LayerCapture, Model, Objective, Trace};
pub use tensor::Tensor;
