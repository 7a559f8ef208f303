//! Multi-domain CTR prediction from text-derived universal features.
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod interaction;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod prompting;
pub mod training;
pub use error::{Error, Result};
