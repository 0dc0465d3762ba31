//! Oriented occlusion boundaries: representation, losses, a small trainable
//! predictor, inference, evaluation, annotation tooling and synthetic scenes.

pub mod angle;
pub mod annotate;
pub mod chain;
pub mod cli;
pub mod error;
pub mod eval;
pub mod infer;
pub mod loss;
pub mod net;
pub mod raster;
pub mod repr;
pub mod synth;

pub use error::{Error, Result};
pub use raster::Raster;
pub use repr::OrientedBoundaryMap;
