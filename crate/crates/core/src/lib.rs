//! Music audio spectrogram transformer pipeline.
//!
//! * [`melfront`]: PCM to log-mel spectrograms, normalization, f16 store
//! * [`patchgrid`]: patch slicing, positional tables, patchout, input tokens
//! * [`model`]: encoder, classifier head, embedding extraction, weight archive
//! * [`train`]: BCE training with mixup, SpecAugment, balanced sampling and SWA
//! * [`probe`]: segment-averaged embeddings, MLP probe, ROC-AUC / mAP
//! * [`benchkit`]: inference-patchout throughput sweeps
//! * [`synth`]: synthetic tagged audio

pub mod benchkit;
pub mod error;
pub mod linalg;
pub mod melfront;
pub mod model;
pub mod nn;
pub mod patchgrid;
pub mod probe;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
