//! Commonsense-guided news image captioning.

pub mod decoder;
pub mod distinguish;
pub mod enrich;
pub mod error;
pub mod eval;
pub mod features;
pub mod kg;
pub mod numeric;
pub mod pipeline;
pub mod sample;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
