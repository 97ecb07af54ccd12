//! Layer-wise phonetic probing of convolutional/recurrent CTC speech models.
//!
//! The pipeline trains a DeepSpeech2-style acoustic model with a CTC loss,
//! freezes it, taps the per-frame output of every layer and measures how
//! much phone information each layer carries with small supervised probes,
//! k-means clustering and sound-class confusion analysis.

pub mod acoustic;
pub mod alphabet;
pub mod clustering;
pub mod ctc;
pub mod error;
pub mod experiment;
pub mod model;
mod par;

pub use par::set_threads;
pub mod phoneset;
pub mod probing;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
