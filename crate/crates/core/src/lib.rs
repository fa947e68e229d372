//! Edge partition models for binary matrices.

pub mod augment;
pub mod checkpoint;
pub mod counts;
pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod idepm;
pub mod options;
pub mod oracle;
pub mod truncated;

pub use error::{Error, Result};
