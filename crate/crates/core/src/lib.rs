pub mod composition;
pub mod data;
pub mod error;
pub mod image;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod taxonomy;
pub mod training;

pub use error::{Error, Result};
