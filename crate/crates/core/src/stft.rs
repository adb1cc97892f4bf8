//! Short-time Fourier analysis and overlap-add synthesis with a sine window.
//!
//! The sine window `w[t] = sin(pi (t + 1/2) / L)` is used for both analysis
//! and synthesis. With a hop of exactly `L/2` the squared windows of
//! neighbouring frames sum to one, so overlap-add inverts the analysis on
//! every sample covered by two frames.

use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_size: usize,
    pub frame_shift: usize,
    #[serde(default)]
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_size: 2048,
            frame_shift: 1024,
            window: Window::Sine,
        }
    }
}

impl StftConfig {
    pub fn new(frame_size: usize) -> Result<Self> {
        let cfg = Self {
            frame_size,
            frame_shift: frame_size / 2,
            window: Window::Sine,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 2 || self.frame_size % 2 != 0 {
            return Err(Error::config(
                "stft.frame_size",
                format!("must be even and >= 2, got {}", self.frame_size),
            ));
        }
        if self.frame_shift * 2 != self.frame_size {
            return Err(Error::config(
                "stft.frame_shift",
                format!(
                    "must be half the frame size ({}), got {}",
                    self.frame_size / 2,
                    self.frame_shift
                ),
            ));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Frames that fit entirely inside `num_samples` samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_size {
            0
        } else {
            (num_samples - self.frame_size) / self.frame_shift + 1
        }
    }

    pub fn window(&self) -> Vec<f64> {
        sine_window(self.frame_size)
    }
}

pub fn sine_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| (std::f64::consts::PI * (t as f64 + 0.5) / len as f64).sin())
        .collect()
}

/// Complex STFT coefficients, stored bin-major: `(f, n, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfTensor {
    data: Vec<Complex64>,
    num_bins: usize,
    num_frames: usize,
    num_channels: usize,
    pub frame_size: usize,
    pub frame_shift: usize,
    pub sample_rate: u32,
    /// Length of the time signal the tensor was computed from.
    pub num_samples: usize,
    /// Zero samples prepended before analysis; dropped again at synthesis.
    pub lead_padding: usize,
}

impl TfTensor {
    pub fn zeros(
        num_bins: usize,
        num_frames: usize,
        num_channels: usize,
        cfg: &StftConfig,
        sample_rate: u32,
    ) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); num_bins * num_frames * num_channels],
            num_bins,
            num_frames,
            num_channels,
            frame_size: cfg.frame_size,
            frame_shift: cfg.frame_shift,
            sample_rate,
            num_samples: num_frames.saturating_sub(1) * cfg.frame_shift + cfg.frame_size,
            lead_padding: 0,
        }
    }

    /// Wraps raw coefficients laid out as `(f, n, i)`.
    pub fn from_vec(
        data: Vec<Complex64>,
        num_bins: usize,
        num_frames: usize,
        num_channels: usize,
        cfg: &StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        if data.len() != num_bins * num_frames * num_channels {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {num_bins}x{num_frames}x{num_channels} tensor",
                data.len()
            )));
        }
        let mut t = Self::zeros(0, num_frames, num_channels, cfg, sample_rate);
        t.num_bins = num_bins;
        t.data = data;
        Ok(t)
    }

    /// Same geometry, all coefficients zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); self.data.len()],
            ..self.clone()
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, f: usize, n: usize) -> usize {
        (f * self.num_frames + n) * self.num_channels
    }

    /// The channel vector `x(n, f)`.
    #[inline]
    pub fn frame(&self, f: usize, n: usize) -> &[Complex64] {
        let k = self.index(f, n);
        &self.data[k..k + self.num_channels]
    }

    #[inline]
    pub fn frame_mut(&mut self, f: usize, n: usize) -> &mut [Complex64] {
        let k = self.index(f, n);
        let c = self.num_channels;
        &mut self.data[k..k + c]
    }

    /// All frames of one bin, `num_frames * num_channels` values.
    pub fn bin(&self, f: usize) -> &[Complex64] {
        let k = self.index(f, 0);
        &self.data[k..k + self.num_frames * self.num_channels]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [Complex64] {
        let k = self.index(f, 0);
        let len = self.num_frames * self.num_channels;
        &mut self.data[k..k + len]
    }

    /// Centre frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.frame_size as f64
    }

    pub fn same_shape(&self, other: &TfTensor) -> bool {
        self.num_bins == other.num_bins
            && self.num_frames == other.num_frames
            && self.num_channels == other.num_channels
    }

    pub fn add_assign(&mut self, other: &TfTensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("tensor shapes differ".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Mean of `|x_i(n, f)|^2` over every coefficient.
    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Analyses every channel. Only frames lying fully inside the signal are
/// produced: `N = floor((T - L) / S) + 1`.
pub fn stft(audio: &MultichannelAudio, cfg: &StftConfig) -> Result<TfTensor> {
    cfg.validate()?;
    let t = audio.num_samples();
    if t < cfg.frame_size {
        return Err(Error::SignalTooShort {
            samples: t,
            frame_size: cfg.frame_size,
        });
    }
    let frames = cfg.num_frames(t);
    let bins = cfg.num_bins();
    let channels = audio.num_channels();
    let window = cfg.window();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.frame_size);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut tf = TfTensor::zeros(bins, frames, channels, cfg, audio.sample_rate());
    tf.num_samples = t;
    for i in 0..channels {
        let x = audio.channel(i);
        for n in 0..frames {
            let start = n * cfg.frame_shift;
            for (k, slot) in input.iter_mut().enumerate() {
                *slot = x[start + k] * window[k];
            }
            fft.process_with_scratch(&mut input, &mut spectrum, &mut scratch)
                .map_err(|e| Error::Precondition(e.to_string()))?;
            for (f, value) in spectrum.iter().enumerate() {
                tf.frame_mut(f, n)[i] = *value;
            }
        }
    }
    Ok(tf)
}

/// Overlap-add synthesis. Returns `tf.num_samples` samples per channel.
pub fn istft(tf: &TfTensor, cfg: &StftConfig) -> Result<MultichannelAudio> {
    cfg.validate()?;
    if tf.frame_size != cfg.frame_size
        || tf.frame_shift != cfg.frame_shift
        || tf.num_bins() != cfg.num_bins()
    {
        return Err(Error::Dimension(format!(
            "tensor with {} bins (frame {}, shift {}) does not match config (frame {}, shift {})",
            tf.num_bins(),
            tf.frame_size,
            tf.frame_shift,
            cfg.frame_size,
            cfg.frame_shift
        )));
    }
    if tf.num_frames() == 0 || tf.num_channels() == 0 {
        return Err(Error::Dimension("empty tensor".into()));
    }
    let window = cfg.window();
    let padded_len = ((tf.num_frames() - 1) * cfg.frame_shift + cfg.frame_size)
        .max(tf.num_samples + tf.lead_padding);

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.frame_size);
    let mut spectrum = ifft.make_input_vec();
    let mut output = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / cfg.frame_size as f64;
    let last = spectrum.len() - 1;

    let mut channels = Vec::with_capacity(tf.num_channels());
    for i in 0..tf.num_channels() {
        let mut y = vec![0.0; padded_len];
        for n in 0..tf.num_frames() {
            for (f, slot) in spectrum.iter_mut().enumerate() {
                *slot = tf.frame(f, n)[i];
            }
            // A real signal has purely real DC and Nyquist coefficients.
            spectrum[0].im = 0.0;
            spectrum[last].im = 0.0;
            ifft.process_with_scratch(&mut spectrum, &mut output, &mut scratch)
                .map_err(|e| Error::Precondition(e.to_string()))?;
            let start = n * cfg.frame_shift;
            for (k, v) in output.iter().enumerate() {
                y[start + k] += v * scale * window[k];
            }
        }
        channels.push(y[tf.lead_padding..tf.lead_padding + tf.num_samples].to_vec());
    }
    MultichannelAudio::new(channels, tf.sample_rate)
}

/// Analysis with one hop of leading zeros and enough trailing zeros that
/// every original sample is covered by two frames. Paired with [`istft`],
/// which removes the padding, the round trip is exact on the whole signal.
pub fn stft_padded(audio: &MultichannelAudio, cfg: &StftConfig) -> Result<TfTensor> {
    cfg.validate()?;
    let t = audio.num_samples();
    let lead = cfg.frame_shift;
    let covered = lead + t + cfg.frame_shift;
    let frames = covered
        .saturating_sub(cfg.frame_size)
        .div_ceil(cfg.frame_shift)
        + 1;
    let total = (frames - 1) * cfg.frame_shift + cfg.frame_size;
    let padded: Vec<Vec<f64>> = audio
        .channels()
        .iter()
        .map(|c| {
            let mut p = vec![0.0; total];
            p[lead..lead + t].copy_from_slice(c);
            p
        })
        .collect();
    let mut tf = stft(&MultichannelAudio::new(padded, audio.sample_rate())?, cfg)?;
    tf.lead_padding = lead;
    tf.num_samples = t;
    Ok(tf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(channels: usize, len: usize, seed: u64) -> MultichannelAudio {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = (0..channels)
            .map(|_| (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        MultichannelAudio::new(ch, 16000).unwrap()
    }

    #[test]
    fn window_power_complementary() {
        let cfg = StftConfig::default();
        let w = cfg.window();
        for t in 0..cfg.frame_shift {
            let s = w[t] * w[t] + w[t + cfg.frame_shift] * w[t + cfg.frame_shift];
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_count_for_ten_seconds() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.num_frames(160_000), 155);
        let tf = stft(&MultichannelAudio::zeros(1, 160_000, 16000).unwrap(), &cfg).unwrap();
        assert_eq!(tf.num_frames(), 155);
        assert_eq!(tf.num_bins(), 1025);
        assert!(tf.as_slice().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn rejects_short_signal_and_bad_hop() {
        let cfg = StftConfig::default();
        let a = MultichannelAudio::zeros(1, 2047, 16000).unwrap();
        assert!(matches!(stft(&a, &cfg), Err(Error::SignalTooShort { .. })));
        let bad = StftConfig {
            frame_size: 2048,
            frame_shift: 512,
            window: Window::Sine,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sinusoid_peaks_at_its_bin() {
        let cfg = StftConfig::new(256).unwrap();
        let k = 17;
        let x: Vec<f64> = (0..4096)
            .map(|t| (2.0 * std::f64::consts::PI * k as f64 * t as f64 / 256.0).cos())
            .collect();
        let tf = stft(&MultichannelAudio::mono(x, 8000).unwrap(), &cfg).unwrap();
        for n in 0..tf.num_frames() {
            let best = (0..tf.num_bins())
                .max_by(|&a, &b| tf.frame(a, n)[0].norm().total_cmp(&tf.frame(b, n)[0].norm()))
                .unwrap();
            assert_eq!(best, k);
        }
    }

    #[test]
    fn interior_round_trip() {
        let cfg = StftConfig::new(512).unwrap();
        let a = noise(2, 20_000, 3);
        let b = istft(&stft(&a, &cfg).unwrap(), &cfg).unwrap();
        let t = a.num_samples();
        let last_covered = (cfg.num_frames(t) - 1) * cfg.frame_shift + cfg.frame_size;
        for i in 0..2 {
            for s in cfg.frame_size..(t - cfg.frame_size).min(last_covered - cfg.frame_shift) {
                let (x, y) = (a.channel(i)[s], b.channel(i)[s]);
                assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-3), "sample {s}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn padded_round_trip_is_exact_everywhere() {
        let cfg = StftConfig::new(256).unwrap();
        let a = noise(2, 3001, 9);
        let tf = stft_padded(&a, &cfg).unwrap();
        let b = istft(&tf, &cfg).unwrap();
        assert_eq!(b.num_samples(), a.num_samples());
        for i in 0..2 {
            for (x, y) in a.channel(i).iter().zip(b.channel(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_bin_inverse_is_windowed_sinusoid() {
        let cfg = StftConfig::new(64).unwrap();
        let mut tf = TfTensor::zeros(cfg.num_bins(), 1, 1, &cfg, 1000);
        let k = 5;
        tf.frame_mut(k, 0)[0] = Complex64::new(32.0, 0.0);
        let y = istft(&tf, &cfg).unwrap();
        let w = cfg.window();
        for t in 0..64 {
            // Inverse DFT of X[k] = X[L-k] = 32 is (2 * 32 / L) cos(2 pi k t / L).
            let expect = w[t] * (2.0 * std::f64::consts::PI * k as f64 * t as f64 / 64.0).cos();
            assert!((y.channel(0)[t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn linearity() {
        let cfg = StftConfig::new(128).unwrap();
        let a = noise(1, 2000, 1);
        let b = noise(1, 2000, 2);
        let sum = MultichannelAudio::sum([&a, &b]).unwrap();
        let (ta, tb, ts) = (
            stft(&a, &cfg).unwrap(),
            stft(&b, &cfg).unwrap(),
            stft(&sum, &cfg).unwrap(),
        );
        for ((x, y), z) in ta.as_slice().iter().zip(tb.as_slice()).zip(ts.as_slice()) {
            assert!((x + y - z).norm() < 1e-12);
        }
    }

    #[test]
    fn energy_consistent_on_stationary_noise() {
        let cfg = StftConfig::new(512).unwrap();
        let a = noise(1, 200_000, 5);
        let tf = stft(&a, &cfg).unwrap();
        let mut tf_energy = 0.0;
        for f in 0..tf.num_bins() {
            let weight = if f == 0 || f == tf.num_bins() - 1 { 1.0 } else { 2.0 };
            for n in 0..tf.num_frames() {
                tf_energy += weight * tf.frame(f, n)[0].norm_sqr();
            }
        }
        tf_energy /= cfg.frame_size as f64;
        let covered = (tf.num_frames() - 1) * cfg.frame_shift + cfg.frame_size;
        let time_energy: f64 = a.channel(0)[..covered].iter().map(|x| x * x).sum();
        assert!((tf_energy / time_energy - 1.0).abs() < 0.01);
    }
}
