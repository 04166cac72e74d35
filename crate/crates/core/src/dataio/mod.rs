//! Recording and manifest files, label schemes, train/val/test splits and
//! the synthetic desk-scale dataset generator.

mod files;
mod labels;
mod split;
mod synth;

pub use files::{load_recording, write_recording, Manifest, ManifestEntry};
pub use labels::{label_scheme, LabelScheme, AGE_BRACKETS};
pub use split::{split, split_indices, SplitMode, SplitSpec};
pub use synth::{synth_dataset, write_dataset, SynthConfig};
