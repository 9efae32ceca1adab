//! Command-line and HTTP front ends for faceprotect: configuration loading,
//! the training/embed/detect/bench commands and the verification service.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use error::CliError;
