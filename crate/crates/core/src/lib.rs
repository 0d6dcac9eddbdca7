//! Multi-view adversarial patch toolkit: homography estimation, patch
//! compositing and projection, patch training against a differentiable toy
//! detector, and cross-view recall evaluation.

pub mod dataset_io;
pub mod detector;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod loss;
pub mod optimizer;
