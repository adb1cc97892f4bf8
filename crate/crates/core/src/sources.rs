//! Self-contained test sources: amplitude-modulated filtered noise with a
//! syllable-like envelope and slowly moving resonances, so that runs need
//! no external speech material.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};

/// Block length over which filter coefficients are held, in seconds.
const BLOCK_S: f64 = 0.005;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn new() -> Self {
        Self {
            b: [0.0; 3],
            a: [0.0; 2],
            z: [0.0; 2],
        }
    }

    /// Constant-peak band-pass at `hz` with quality factor `q`.
    fn set_bandpass(&mut self, hz: f64, q: f64, fs: f64) {
        let w = 2.0 * PI * hz / fs;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        self.b = [alpha / a0, 0.0, -alpha / a0];
        self.a = [-2.0 * w.cos() / a0, (1.0 - alpha) / a0];
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

struct Segment {
    len: usize,
    gain: f64,
    formants: [(f64, f64); 3],
}

fn draw_segments(rng: &mut ChaCha8Rng, total: usize, fs: f64) -> Vec<Segment> {
    let ranges = [(250.0, 900.0), (900.0, 2400.0), (2400.0, 3800.0)];
    let mut out = Vec::new();
    let mut used = 0;
    while used < total {
        let voiced = rng.random::<f64>() < 0.75;
        let secs = if voiced {
            rng.random_range(0.12..0.35)
        } else {
            rng.random_range(0.04..0.2)
        };
        let len = ((secs * fs) as usize).max(1).min(total - used);
        let level: f64 = StandardNormal.sample(rng);
        let gain = if voiced { (0.8 * level).exp() } else { 0.0 };
        let formants = ranges.map(|(lo, hi)| {
            let a = rng.random_range(lo..hi);
            let b = rng.random_range(lo..hi);
            (a, b)
        });
        out.push(Segment { len, gain, formants });
        used += len;
    }
    out
}

/// One mono source of `duration_s` seconds, normalised to unit RMS.
pub fn speech_like(seed: u64, duration_s: f64, sample_rate: u32) -> Result<MultichannelAudio> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::config("duration_s", "must be positive"));
    }
    if sample_rate < 8000 {
        return Err(Error::config("sample_rate", "must be at least 8000 Hz"));
    }
    let fs = sample_rate as f64;
    let total = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = draw_segments(&mut rng, total, fs);
    let block = ((BLOCK_S * fs) as usize).max(1);
    let mut filters = [Biquad::new(); 3];
    let weights = [1.0, 0.6, 0.3];
    let mut out = Vec::with_capacity(total);
    for seg in &segments {
        // Raised-cosine attack and release of at most 20 ms.
        let ramp = ((0.02 * fs) as usize).min(seg.len / 2).max(1);
        for t in 0..seg.len {
            if t % block == 0 {
                let frac = t as f64 / seg.len as f64;
                for (filt, (a, b)) in filters.iter_mut().zip(seg.formants) {
                    filt.set_bandpass(a + (b - a) * frac, 6.0, fs);
                }
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = filters
                .iter_mut()
                .zip(weights)
                .map(|(filt, w)| w * filt.process(e))
                .sum();
            let edge = t.min(seg.len - 1 - t);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            out.push(seg.gain * env * y);
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / total.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    MultichannelAudio::mono(out, sample_rate)
}

/// `count` independent sources derived from one seed.
pub fn speech_like_set(
    seed: u64,
    count: usize,
    duration_s: f64,
    sample_rate: u32,
) -> Result<Vec<MultichannelAudio>> {
    (0..count)
        .map(|j| speech_like(seed.wrapping_mul(0x9E37_79B9).wrapping_add(j as u64), duration_s, sample_rate))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalised() {
        let a = speech_like(3, 1.0, 16000).unwrap();
        let b = speech_like(3, 1.0, 16000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_samples(), 16000);
        let rms = (a.energy() / 16000.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
        assert_ne!(a, speech_like(4, 1.0, 16000).unwrap());
    }

    #[test]
    fn envelope_has_pauses_and_peaks() {
        // Short-term energy in 20 ms blocks spans a wide range, as speech does.
        let s = speech_like(9, 5.0, 16000).unwrap();
        let mut e: Vec<f64> = s
            .channel(0)
            .chunks(320)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
            .collect();
        e.sort_by(f64::total_cmp);
        let lo = e[e.len() / 10];
        let hi = e[e.len() * 9 / 10];
        assert!(hi > 100.0 * lo.max(1e-30), "{lo} {hi}");
    }

    #[test]
    fn energy_is_band_limited() {
        let s = speech_like(1, 2.0, 16000).unwrap();
        let x = s.channel(0);
        // First difference energy relative to signal energy measures the
        // share of high frequencies; white noise gives about 2.
        let d: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let e: f64 = x.iter().map(|v| v * v).sum();
        assert!(d / e < 1.0);
    }

    #[test]
    fn set_members_differ() {
        let set = speech_like_set(5, 3, 0.5, 16000).unwrap();
        assert_eq!(set.len(), 3);
        assert_ne!(set[0], set[1]);
        assert_ne!(set[1], set[2]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(speech_like(0, 0.0, 16000).is_err());
        assert!(speech_like(0, 1.0, 100).is_err());
    }
}
