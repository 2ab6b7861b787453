//! Nested frame/segment transformer for speech emotion recognition on
//! log-Mel spectrograms, with the audio front-end, a reverse-mode autodiff
//! engine, and leave-one-speaker-out training and evaluation.

pub mod audio;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
