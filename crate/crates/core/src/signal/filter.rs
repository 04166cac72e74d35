//! Butterworth band-pass design and forward-backward (zero-phase) filtering.
//!
//! The analog low-pass prototype of order `N` is moved to the band with the
//! standard low-pass to band-pass substitution, mapped to the z-plane with a
//! pre-warped bilinear transform, and stored as `N` second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{Recording, DEFAULT_FILTER_ORDER};
use crate::{Error, Result};

/// Second-order section `[b0, b1, b2, a1, a2]` with `a0 = 1`.
type Section = [f64; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthBandpass {
    sections: Vec<Section>,
    sample_rate_hz: f64,
}

impl ButterworthBandpass {
    /// Designs a band-pass from an even-order low-pass prototype.
    pub fn design(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::Parameter(format!("filter order must be even and positive, got {order}")));
        }
        let nyquist = sample_rate_hz / 2.0;
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
            return Err(Error::Parameter(format!(
                "band edges must satisfy 0 < low < high < {nyquist} Hz, got {low_hz}..{high_hz}"
            )));
        }
        let fs2 = 2.0 * sample_rate_hz;
        let w1 = fs2 * (PI * low_hz / sample_rate_hz).tan();
        let w2 = fs2 * (PI * high_hz / sample_rate_hz).tan();
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        let mut sections = Vec::with_capacity(order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            if proto.im <= 0.0 {
                // conjugate partner of an upper-half prototype pole
                continue;
            }
            let half = proto * (bw / 2.0);
            let disc = (half * half - w0_sq).sqrt();
            // Each upper-half prototype pole maps to two band-pass poles whose
            // conjugates come from the partner prototype pole.
            for s in [half + disc, half - disc] {
                let z = (fs2 + s) / (fs2 - s);
                let z = if z.im < 0.0 { z.conj() } else { z };
                sections.push([1.0, 0.0, -1.0, -2.0 * z.re, z.norm_sqr()]);
            }
        }

        let mut filter = Self { sections, sample_rate_hz };
        // Unit gain at the digital image of the analog center frequency.
        let center = (w0_sq.sqrt() / fs2).atan() * sample_rate_hz / PI;
        let gain = filter.magnitude(center);
        let per_section = gain.powf(-1.0 / filter.sections.len() as f64);
        for s in &mut filter.sections {
            for b in &mut s[..3] {
                *b *= per_section;
            }
        }
        Ok(filter)
    }

    pub fn sections(&self) -> &[[f64; 5]] {
        &self.sections
    }

    /// Magnitude of the single-pass frequency response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|&[b0, b1, b2, a1, a2]| ((b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)).norm())
            .product()
    }

    /// Causal filtering with the given per-section initial states.
    fn run(&self, x: &mut [f64], init: &[[f64; 2]], scale: f64) {
        for (&[b0, b1, b2, a1, a2], zi) in self.sections.iter().zip(init) {
            let mut z1 = zi[0] * scale;
            let mut z2 = zi[1] * scale;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Steady-state section states for a unit step input.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|&[b0, b1, b2, a1, a2]| {
                let r0 = b1 - a1 * b0;
                let r1 = b2 - a2 * b0;
                let z0 = (r0 + r1) / (1.0 + a1 + a2);
                let z1 = r1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                zi
            })
            .collect()
    }

    /// Zero-phase filtering: odd-extended edges, forward pass, reverse pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let edge = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let (first, last) = (x[0], x[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * edge);
        ext.extend((1..=edge).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((n - 1 - edge..n - 1).rev().map(|i| 2.0 * last - x[i]));

        let zi = self.step_states();
        let x0 = ext[0];
        self.run(&mut ext, &zi, x0);
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, &zi, y0);
        ext.reverse();
        ext[edge..edge + n].to_vec()
    }
}

/// Zero-phase band-pass of every channel with a 4th-order Butterworth prototype.
pub fn bandpass_filter(rec: &Recording, low_hz: f64, high_hz: f64) -> Result<Recording> {
    let filter = ButterworthBandpass::design(DEFAULT_FILTER_ORDER, low_hz, high_hz, rec.sample_rate_hz())?;
    let c = rec.num_channels();
    let mut out = vec![0.0; rec.samples().len()];
    for ch in 0..c {
        let y = filter.filtfilt(&rec.channel(ch));
        for (t, v) in y.into_iter().enumerate() {
            out[t * c + ch] = v;
        }
    }
    Ok(rec.with_samples(out))
}
