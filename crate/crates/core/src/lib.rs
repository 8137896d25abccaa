//! Cross-entropy combined with deep-metric-learning objectives (SupCon and
//! SoftTriple), a small trainable encoder, and a few-shot evaluation harness.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
