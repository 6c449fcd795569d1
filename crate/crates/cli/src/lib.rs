//! Command-line entry points and the HTTP synthesis service.

pub mod commands;
pub mod engine;
pub mod error;
pub mod eval;
pub mod service;
pub mod store;

pub use error::ApiError;
