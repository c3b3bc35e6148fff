//! MR-to-X-ray projection synthesis: a procedural co-registered head
//! phantom, cone-beam forward projection, three generator architectures,
//! pixel and perceptual losses, image-quality metrics and an ADAM training
//! loop, all on top of `projsynth-tensor`.

mod error;
pub mod experiment;
pub mod generators;
pub mod metrics;
pub mod objectives;
pub mod phantom;
pub mod projector;
pub mod training;

pub use error::{Error, Result};
