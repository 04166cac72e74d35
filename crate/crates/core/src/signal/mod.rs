//! EEG preprocessing: recordings, band-pass filtering, epoching, epoch
//! rejection and per-channel standardization.

mod epoch;
mod filter;
mod recording;

pub use epoch::{epoch, reject_epochs, standardize, ChannelStats, EpochSet};
pub use filter::{bandpass_filter, ButterworthBandpass};
pub use recording::{Gender, LabelFields, Recording, Segment, STEW_CHANNELS};

/// Default preprocessing parameters.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 128.0;
pub const DEFAULT_LOW_HZ: f64 = 1.0;
pub const DEFAULT_HIGH_HZ: f64 = 40.0;
pub const DEFAULT_FILTER_ORDER: usize = 4;
pub const DEFAULT_WINDOW_SAMPLES: usize = 256;
pub const DEFAULT_STRIDE_SAMPLES: usize = 128;
pub const DEFAULT_REJECT_UV: f64 = 200.0;
