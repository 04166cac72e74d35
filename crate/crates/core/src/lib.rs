//! Transformer-encoder classification of raw multichannel EEG windows.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode autodiff tape.
//! - [`signal`]: band-pass filtering, epoching, epoch rejection, standardization.
//! - [`dataio`]: recording/manifest files, label schemes, splits, synthetic data.
//! - [`model`]: the transformer classifier and its checkpoint format.
//! - [`train`]: cross-entropy, Adam, and the early-stopping fit loop.
//! - [`metrics`]: confusion matrix, precision/recall/F1, ROC/AUC, PCA projection.
//! - [`cli`]: run configuration and the subcommands behind the `eegformer` binary.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// A value together with the non-fatal warnings produced while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Warned<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Warned<T> {
    pub fn clean(value: T) -> Self {
        Self { value, warnings: Vec::new() }
    }

    pub fn new(value: T, warnings: Vec<String>) -> Self {
        for w in &warnings {
            log::warn!("{w}");
        }
        Self { value, warnings }
    }
}
