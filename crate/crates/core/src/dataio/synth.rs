//! Synthetic multichannel recordings with one spectral signature per class.
//!
//! Every subject gets 1/f background noise on each channel plus a sinusoid at
//! `6 + 4k` Hz for class `k`, with a per-subject phase, per-channel phase
//! jitter (uniform over the full circle by default) and per-channel gain.
//! Class metadata is written so the natural scheme applies: 2 classes →
//! `load2`, 3 → `load3`, 6 → `age6`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::files::{write_recording, Manifest, ManifestEntry};
use crate::signal::{Gender, LabelFields, Recording, Segment, DEFAULT_SAMPLE_RATE_HZ, STEW_CHANNELS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub subjects_per_class: usize,
    pub seconds_per_subject: f64,
    pub seed: u64,
    /// Standard deviation of the background noise, µV.
    pub noise_uv: f64,
    /// Peak amplitude of the class sinusoid before channel gain, µV.
    pub signal_uv: f64,
    /// Half-width of the uniform per-channel phase offset, radians.
    pub phase_jitter_rad: f64,
    pub sample_rate_hz: f64,
}

impl SynthConfig {
    pub fn new(num_classes: usize, subjects_per_class: usize, seconds_per_subject: f64, seed: u64) -> Self {
        Self {
            num_classes,
            subjects_per_class,
            seconds_per_subject,
            seed,
            noise_uv: 10.0,
            signal_uv: 15.0,
            phase_jitter_rad: PI,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }

    pub fn class_frequency_hz(k: usize) -> f64 {
        6.0 + 4.0 * k as f64
    }
}

/// Metadata that maps to class `k` under the natural scheme for `num_classes`.
fn class_labels(k: usize, num_classes: usize) -> LabelFields {
    const AGES: [u32; 6] = [8, 14, 21, 27, 36, 49];
    const RATINGS: [u8; 3] = [2, 5, 8];
    let rating = match num_classes {
        3 => RATINGS[k],
        _ => RATINGS[if k == 0 { 0 } else { 2 }],
    };
    LabelFields {
        gender: Some(if k % 2 == 0 { Gender::Male } else { Gender::Female }),
        age_years: Some(if num_classes == 6 { AGES[k] } else { AGES[2] }),
        workload_rating: Some(rating),
        task_segment: Some(if k == 0 { Segment::Rest } else { Segment::Simkap }),
    }
}

/// Unit-variance noise with a 1/f power spectrum and no DC component.
fn pink_noise<R: Rng>(n: usize, rng: &mut R, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k);
        *v = if f == 0 { Complex64::new(0.0, 0.0) } else { *v / (f as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Generates `num_classes × subjects_per_class` single-recording subjects.
///
/// Subject `i` belongs to class `i % num_classes`. Values are rounded to
/// 1e-4 µV so they survive the text format unchanged.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(Manifest, Vec<Recording>)> {
    if ![2, 3, 6].contains(&cfg.num_classes) {
        return Err(Error::Parameter(format!("num_classes must be 2, 3 or 6, got {}", cfg.num_classes)));
    }
    if cfg.subjects_per_class == 0 {
        return Err(Error::Parameter("subjects_per_class must be at least 1".into()));
    }
    let n = (cfg.seconds_per_subject * cfg.sample_rate_hz).round() as usize;
    if n < 2 {
        return Err(Error::Parameter(format!("{} s is too short to synthesize", cfg.seconds_per_subject)));
    }
    let c = STEW_CHANNELS.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut planner = FftPlanner::new();
    let total = cfg.num_classes * cfg.subjects_per_class;
    let mut entries = Vec::with_capacity(total);
    let mut recordings = Vec::with_capacity(total);
    for i in 0..total {
        let k = i % cfg.num_classes;
        let freq = SynthConfig::class_frequency_hz(k);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let mut samples = vec![0.0; n * c];
        for ch in 0..c {
            let jitter: f64 = rng.random_range(-1.0..1.0) * cfg.phase_jitter_rad;
            let gain: f64 = rng.random_range(0.5..1.0);
            let noise = pink_noise(n, &mut rng, &mut planner);
            for (t, z) in noise.into_iter().enumerate() {
                let s = cfg.signal_uv * gain * (2.0 * PI * freq * t as f64 / cfg.sample_rate_hz + phase + jitter).sin();
                let v = cfg.noise_uv * z + s;
                samples[t * c + ch] = (v * 1e4).round() / 1e4;
            }
        }
        let subject = format!("S{:03}", i + 1);
        let labels = class_labels(k, cfg.num_classes);
        let rec = Recording::with_stew_channels(samples, cfg.sample_rate_hz, subject.clone())?.with_labels(labels.clone());
        entries.push(ManifestEntry { path: PathBuf::from(format!("{subject}.txt")), subject_id: subject, labels });
        recordings.push(rec);
    }
    Ok((Manifest::new(entries)?, recordings))
}

/// Writes the recordings and `manifest.txt` into `dir`; returns the file count.
pub fn write_dataset(dir: &Path, manifest: &Manifest, recordings: &[Recording]) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, rec) in manifest.entries().iter().zip(recordings) {
        write_recording(&dir.join(&entry.path), rec)?;
    }
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(recordings.len() + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{label_scheme, LabelScheme};

    /// Plain DFT power at one frequency, averaged over channels.
    fn power_at(rec: &Recording, freq: f64) -> f64 {
        let n = rec.num_samples();
        (0..rec.num_channels())
            .map(|ch| {
                let x = rec.channel(ch);
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let ph = 2.0 * PI * freq * t as f64 / rec.sample_rate_hz();
                    re += v * ph.cos();
                    im -= v * ph.sin();
                }
                (re * re + im * im) / n as f64
            })
            .sum::<f64>()
            / rec.num_channels() as f64
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::new(2, 3, 4.0, 7);
        let a = synth_dataset(&cfg).unwrap();
        let b = synth_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn rejects_unsupported_class_counts() {
        for k in [0, 1, 4, 5, 7] {
            assert!(matches!(synth_dataset(&SynthConfig::new(k, 2, 2.0, 1)), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn class_spectra_peak_at_their_frequency() {
        let (_, recs) = synth_dataset(&SynthConfig::new(2, 4, 30.0, 7)).unwrap();
        let avg = |k: usize, f: f64| {
            let rs: Vec<&Recording> = recs.iter().skip(k).step_by(2).collect();
            rs.iter().map(|r| power_at(r, f)).sum::<f64>() / rs.len() as f64
        };
        assert!(avg(0, 6.0) > 5.0 * avg(1, 6.0), "{} {}", avg(0, 6.0), avg(1, 6.0));
        assert!(avg(1, 10.0) > 5.0 * avg(0, 10.0), "{} {}", avg(1, 10.0), avg(0, 10.0));
    }

    #[test]
    fn metadata_maps_to_class_under_natural_scheme() {
        for (k, scheme) in [(2, LabelScheme::Load2), (3, LabelScheme::Load3), (6, LabelScheme::Age6)] {
            let (m, recs) = synth_dataset(&SynthConfig::new(k, 2, 1.0, 3)).unwrap();
            for (i, e) in m.entries().iter().enumerate() {
                assert_eq!(label_scheme(&e.labels, scheme).unwrap(), i % k);
                assert_eq!(recs[i].labels, e.labels);
            }
        }
    }

    #[test]
    fn pink_noise_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = pink_noise(4096, &mut rng, &mut FftPlanner::new());
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn written_dataset_reloads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (m, recs) = synth_dataset(&SynthConfig::new(2, 1, 2.0, 5)).unwrap();
        assert_eq!(write_dataset(dir.path(), &m, &recs).unwrap(), 3);
        let loaded = Manifest::load(&dir.path().join("manifest.txt")).unwrap();
        for (e, r) in loaded.entries().iter().zip(&recs) {
            let back = crate::dataio::load_recording(&e.path, 128.0).unwrap();
            assert_eq!(back.samples(), r.samples());
        }
    }
}
