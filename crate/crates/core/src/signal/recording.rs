use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Emotiv EPOC channel order used by STEW-style recordings.
pub const STEW_CHANNELS: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
}

/// Experiment segment of a workload recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Rest,
    Simkap,
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Gender::Male),
            "f" | "female" => Ok(Gender::Female),
            other => Err(format!("unknown gender {other:?} (expected male/female)")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rest" | "lo" => Ok(Segment::Rest),
            "simkap" | "hi" => Ok(Segment::Simkap),
            other => Err(format!("unknown segment {other:?} (expected rest/simkap)")),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Rest => "rest",
            Segment::Simkap => "simkap",
        })
    }
}

/// Metadata a recording can be labelled by.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelFields {
    pub gender: Option<Gender>,
    pub age_years: Option<u32>,
    /// Self-reported workload on the 1–9 scale.
    pub workload_rating: Option<u8>,
    pub task_segment: Option<Segment>,
}

/// One subject-session of multichannel EEG, samples in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: Vec<f64>,
    num_channels: usize,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    pub subject_id: String,
    pub labels: LabelFields,
}

impl Recording {
    /// `samples` is row-major `num_samples × channel_names.len()`.
    pub fn new(
        samples: Vec<f64>,
        channel_names: Vec<String>,
        sample_rate_hz: f64,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        let num_channels = channel_names.len();
        if num_channels == 0 {
            return Err(Error::Parameter("recording needs at least one channel".into()));
        }
        if samples.len() % num_channels != 0 {
            return Err(Error::Parameter(format!(
                "{} values do not fill whole rows of {num_channels} channels",
                samples.len()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Parameter(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite sample at row {}, channel {}",
                i / num_channels,
                i % num_channels
            )));
        }
        Ok(Self {
            samples,
            num_channels,
            sample_rate_hz,
            channel_names,
            subject_id: subject_id.into(),
            labels: LabelFields::default(),
        })
    }

    /// Recording with the 14 default channel names.
    pub fn with_stew_channels(samples: Vec<f64>, sample_rate_hz: f64, subject_id: impl Into<String>) -> Result<Self> {
        let names = STEW_CHANNELS.iter().map(|s| s.to_string()).collect();
        Self::new(samples, names, sample_rate_hz, subject_id)
    }

    pub fn with_labels(mut self, labels: LabelFields) -> Self {
        self.labels = labels;
        self
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len() / self.num_channels
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_secs(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Row-major `num_samples × num_channels` samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.samples[t * self.num_channels..(t + 1) * self.num_channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().skip(c).step_by(self.num_channels).copied().collect()
    }

    /// Copy of this recording with new sample values of the same layout.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self { samples, ..self.clone() }
    }
}
