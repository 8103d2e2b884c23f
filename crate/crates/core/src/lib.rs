//! Multimodal encoder / latent-fusion / decoder model with a fail-operational
//! safety harness.
//!
//! Camera, depth (LiDAR projected into the camera frame) and text each pass
//! through their own encoder branch into a shared latent space. An
//! attention stack fuses the available modalities, and task decoders read
//! only the fused latent. The [`safety`] module injects faults, checks that
//! branches stay independent, and validates ASIL decomposition claims.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod safety;
pub mod scene;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
