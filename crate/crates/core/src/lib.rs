//! Conditional latent coding: a dictionary-conditioned block-transform image codec.

pub mod bench;
pub mod dictionary;
pub mod error;
pub mod features;
pub mod image;
pub mod numerics;
pub mod transforms;
pub mod conditioning;
pub mod entropy;
pub mod codec;
pub mod metrics;
pub mod synth;
pub mod theory;

pub use error::{ClcError, Result};
pub use image::{Image, ImagePatch};
