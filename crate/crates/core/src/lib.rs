//! Proactive deepfake detection by hiding an identity-derived watermark in face images.

pub mod bench;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod features;
pub mod godwgm;
pub mod image;
pub mod metrics;
pub mod ndjson;
pub mod pipeline;
pub mod seqcodec;
pub mod tampersim;
pub mod verify;
pub mod wvs;

pub use error::{Error, Result};
