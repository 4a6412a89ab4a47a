//! Detection of upper esophageal sphincter opening from tri-axial neck
//! accelerometry: preprocessing, a convolutional-recurrent segmentation
//! network, cross-validated training and per-swallow evaluation.

pub mod dsp;
pub mod error;
pub mod framing;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use framing::{ChunkSequence, Prediction};
pub use model::{predict, predict_mask, Checkpoint, Mode, ModelConfig, Network, TrainingMeta};
pub use types::*;
