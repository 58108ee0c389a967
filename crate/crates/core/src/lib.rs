//! Cognate detection with a shared character n-gram encoder.
//!
//! The pipeline pretrains a word encoder on monolingual morphology pairs,
//! then classifies cross-lingual word pairs either with labels or by
//! clustering self-training.

pub mod data;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod morphology;
pub mod numerics;
pub mod pipeline;
pub mod presets;

pub use error::{Error, Result};
