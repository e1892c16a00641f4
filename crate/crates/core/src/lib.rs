//! VQA-grounded image-caption ranking.

pub mod checks;
pub mod data;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod heads;
pub mod numcore;
pub mod pipeline;
pub mod qa_select;
pub mod ranking;

pub use error::{Error, FormatError, Result};
