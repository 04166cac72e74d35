//! Sparse cross-entropy, Adam and the early-stopping training loop.

mod adam;
mod fit;

pub use adam::{adam_step, Adam, AdamState};
pub use fit::{argmax_rows, cross_entropy, evaluate, fit, EarlyStopping, EpochRecord, Evaluation, TrainConfig, TrainLog};
