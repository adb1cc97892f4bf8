//! Shoebox room simulation by the image-source method, convolutive mixing
//! and the statistical room acoustics quantities used by the direct+diffuse
//! spatial model.

use std::f64::consts::PI;

use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};
use crate::tensorfile::{Tensor, TensorBundle};

pub type Point = [f64; 3];

/// Half-width of the fractional-delay interpolation kernel, in samples.
pub const KERNEL_HALF_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// `(Lx, Ly, Lz)` in metres.
    pub dims: [f64; 3],
    /// Reverberation time in seconds; zero means anechoic.
    pub t60: f64,
    #[serde(default = "default_sound_velocity")]
    pub sound_velocity: f64,
}

pub fn default_sound_velocity() -> f64 {
    334.0
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dims: [5.0, 4.0, 3.0],
            t60: 0.25,
            sound_velocity: default_sound_velocity(),
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        for (k, d) in self.dims.iter().enumerate() {
            if !(d.is_finite() && *d > 0.0) {
                return Err(Error::config(format!("room.dims[{k}]"), "must be positive"));
            }
        }
        if !(self.t60.is_finite() && self.t60 >= 0.0) {
            return Err(Error::config("room.t60", "must be non-negative"));
        }
        if !(self.sound_velocity.is_finite() && self.sound_velocity > 0.0) {
            return Err(Error::config("room.sound_velocity", "must be positive"));
        }
        Ok(())
    }

    /// Total wall area `2 (LxLy + LyLz + LxLz)`.
    pub fn wall_area(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + y * z + x * z)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.iter()
            .zip(&self.dims)
            .all(|(c, d)| c.is_finite() && *c > 0.0 && c < d)
    }
}

/// Wall reflection coefficient from the reverberation time (Eyring).
/// Zero reverberation time maps to a fully absorbing room.
pub fn eyring_beta(room: &RoomSpec) -> f64 {
    if room.t60 <= 0.0 {
        return 0.0;
    }
    let inv: f64 = room.dims.iter().map(|d| 1.0 / d).sum();
    (-13.82 / (inv * room.sound_velocity * room.t60)).exp()
}

/// Power of the reverberant field, `4 beta^2 / (A (1 - beta^2))`.
pub fn reverberant_power(room: &RoomSpec) -> Result<f64> {
    reverberant_power_from(eyring_beta(room), room.wall_area())
}

pub fn reverberant_power_from(beta: f64, wall_area: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Domain(format!(
            "reflection coefficient {beta} outside [0, 1)"
        )));
    }
    if wall_area <= 0.0 {
        return Err(Error::Domain("wall area must be positive".into()));
    }
    let b2 = beta * beta;
    Ok(4.0 * b2 / (wall_area * (1.0 - b2)))
}

/// Normalised cross-correlation of a diffuse field between two points `d`
/// metres apart at frequency `f`: `sin(2 pi f d / c) / (2 pi f d / c)`.
pub fn diffuse_coherence(d: f64, f: f64, c: f64) -> f64 {
    let arg = 2.0 * PI * f * d / c;
    if arg.abs() < 1e-8 {
        // Taylor series; exact to double precision in this range.
        1.0 - arg * arg / 6.0
    } else {
        arg.sin() / arg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub sources: Vec<Point>,
    pub mics: Vec<Point>,
}

impl SceneSpec {
    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::config("scene.sources", "at least one source required"));
        }
        if self.mics.is_empty() {
            return Err(Error::config("scene.mics", "at least one microphone required"));
        }
        if let Some(j) = self.sources.iter().position(|p| !room.contains(p)) {
            return Err(Error::OutsideRoom {
                what: "source",
                index: j,
            });
        }
        if let Some(i) = self.mics.iter().position(|p| !room.contains(p)) {
            return Err(Error::OutsideRoom {
                what: "microphone",
                index: i,
            });
        }
        for j in 0..self.sources.len() {
            for i in 0..self.mics.len() {
                if self.source_mic_distance(j, i) <= 0.0 {
                    return Err(Error::config(
                        format!("scene.sources[{j}]"),
                        format!("coincides with microphone {i}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `r_ij`: distance from source `j` to microphone `i`.
    pub fn source_mic_distance(&self, j: usize, i: usize) -> f64 {
        distance(&self.sources[j], &self.mics[i])
    }

    /// `d_il`: distance between microphones `i` and `l`.
    pub fn mic_distance(&self, i: usize, l: usize) -> f64 {
        distance(&self.mics[i], &self.mics[l])
    }

    /// Linear two-microphone array with sources on a circle around its
    /// centre. Azimuths are in degrees from broadside; the array axis is x.
    pub fn circular(center: Point, mic_spacing: f64, radius: f64, azimuths_deg: &[f64]) -> Self {
        let mics = vec![
            [center[0] - mic_spacing / 2.0, center[1], center[2]],
            [center[0] + mic_spacing / 2.0, center[1], center[2]],
        ];
        let sources = azimuths_deg
            .iter()
            .map(|a| {
                let t = a.to_radians();
                [center[0] + radius * t.sin(), center[1] + radius * t.cos(), center[2]]
            })
            .collect();
        Self { sources, mics }
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mixing filters `h_j(tau)`: `taps[j][i]` runs from source `j` to mic `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseSet {
    pub taps: Vec<Vec<Vec<f64>>>,
    pub sample_rate: u32,
}

impl ImpulseResponseSet {
    pub fn num_sources(&self) -> usize {
        self.taps.len()
    }

    pub fn num_mics(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.taps
            .first()
            .and_then(|m| m.first())
            .map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Filters of one source as an I-channel signal.
    pub fn source_audio(&self, j: usize) -> Result<MultichannelAudio> {
        MultichannelAudio::new(self.taps[j].clone(), self.sample_rate)
    }

    pub fn from_source_audio(per_source: &[MultichannelAudio]) -> Result<Self> {
        let first = per_source
            .first()
            .ok_or_else(|| Error::Precondition("no impulse responses".into()))?;
        for (j, a) in per_source.iter().enumerate() {
            if a.num_channels() != first.num_channels()
                || a.num_samples() != first.num_samples()
                || a.sample_rate() != first.sample_rate()
            {
                return Err(Error::Dimension(format!(
                    "impulse response {j} differs in shape or rate from the first"
                )));
            }
        }
        Ok(Self {
            taps: per_source.iter().map(|a| a.channels().to_vec()).collect(),
            sample_rate: first.sample_rate(),
        })
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let data = self.taps.iter().flatten().flatten().copied().collect();
        let tensor = Tensor::real("rir", vec![self.num_sources(), self.num_mics(), self.len()], data)?
            .with_sample_rate(self.sample_rate as f64);
        let mut b = TensorBundle::new().with_meta("content", "impulse_responses");
        b.push(tensor);
        Ok(b)
    }

    pub fn from_bundle(bundle: &TensorBundle) -> Result<Self> {
        let t = bundle.get("rir")?;
        if t.dims.len() != 3 || t.dims.contains(&0) {
            return Err(Error::MalformedTensor(format!("rir dims {:?}", t.dims)));
        }
        let rate = t.sample_rate;
        if !(rate.is_finite() && rate >= 1.0 && rate <= u32::MAX as f64 && rate.fract() == 0.0) {
            return Err(Error::MalformedTensor(format!("sample rate {rate}")));
        }
        let data = t.as_real()?;
        let (jn, imn, len) = (t.dims[0], t.dims[1], t.dims[2]);
        let taps = (0..jn)
            .map(|j| {
                (0..imn)
                    .map(|i| data[(j * imn + i) * len..(j * imn + i + 1) * len].to_vec())
                    .collect()
            })
            .collect();
        Ok(Self {
            taps,
            sample_rate: rate as u32,
        })
    }
}

/// Default filter length: `ceil(1.2 T60 fs)`, extended if needed so that the
/// direct path and its interpolation kernel always fit.
pub fn default_rir_length(room: &RoomSpec, scene: &SceneSpec, sample_rate: u32) -> usize {
    let fs = sample_rate as f64;
    let decay = (1.2 * room.t60 * fs).ceil() as usize;
    let max_r = (0..scene.sources.len())
        .flat_map(|j| (0..scene.mics.len()).map(move |i| (j, i)))
        .map(|(j, i)| scene.source_mic_distance(j, i))
        .fold(0.0, f64::max);
    let direct = (max_r * fs / room.sound_velocity).ceil() as usize + KERNEL_HALF_WIDTH + 1;
    decay.max(direct).max(1)
}

/// Image-source simulation with a uniform reflection coefficient on all six
/// walls. Each image contributes a Hann-windowed sinc pulse centred on its
/// fractional delay with gain `beta^k / (sqrt(4 pi) r)`.
pub fn simulate_rir(
    room: &RoomSpec,
    scene: &SceneSpec,
    sample_rate: u32,
    length: Option<usize>,
) -> Result<ImpulseResponseSet> {
    room.validate()?;
    scene.validate(room)?;
    if sample_rate == 0 {
        return Err(Error::config("sample_rate", "must be positive"));
    }
    let len = length.unwrap_or_else(|| default_rir_length(room, scene, sample_rate));
    if len == 0 {
        return Err(Error::config("rir_length", "must be at least one tap"));
    }
    let beta = eyring_beta(room);
    let fs = sample_rate as f64;
    let c = room.sound_velocity;
    let max_dist = (len + KERNEL_HALF_WIDTH) as f64 * c / fs;
    let kernel = KernelTable::new();

    let mut taps = Vec::with_capacity(scene.sources.len());
    for src in &scene.sources {
        let mut per_mic = Vec::with_capacity(scene.mics.len());
        for mic in &scene.mics {
            let mut h = vec![0.0; len];
            for_each_image(room, src, beta, max_dist, |img, gain_num| {
                let r = distance(&img, mic);
                let delay = r * fs / c;
                let gain = gain_num / ((4.0 * PI).sqrt() * r);
                kernel.accumulate(&mut h, delay, gain);
            });
            per_mic.push(h);
        }
        taps.push(per_mic);
    }
    Ok(ImpulseResponseSet { taps, sample_rate })
}

/// Visits every image position within `max_dist` of the room together with
/// its reflection attenuation `beta^k`.
fn for_each_image(
    room: &RoomSpec,
    src: &Point,
    beta: f64,
    max_dist: f64,
    mut visit: impl FnMut(Point, f64),
) {
    let reach: Vec<i64> = room
        .dims
        .iter()
        .map(|d| (max_dist / (2.0 * d)).ceil() as i64 + 1)
        .collect();
    let max_sq = (max_dist + room.dims.iter().map(|d| d * d).sum::<f64>().sqrt()).powi(2);
    for nx in -reach[0]..=reach[0] {
        for qx in 0..2i64 {
            let x = (1 - 2 * qx) as f64 * src[0] + 2.0 * nx as f64 * room.dims[0];
            let kx = (nx - qx).abs() + nx.abs();
            for ny in -reach[1]..=reach[1] {
                for qy in 0..2i64 {
                    let y = (1 - 2 * qy) as f64 * src[1] + 2.0 * ny as f64 * room.dims[1];
                    let ky = (ny - qy).abs() + ny.abs();
                    for nz in -reach[2]..=reach[2] {
                        for qz in 0..2i64 {
                            let z = (1 - 2 * qz) as f64 * src[2] + 2.0 * nz as f64 * room.dims[2];
                            let k = kx + ky + (nz - qz).abs() + nz.abs();
                            if beta == 0.0 && k > 0 {
                                continue;
                            }
                            let img = [x, y, z];
                            if distance(&img, src) > max_sq.sqrt() {
                                continue;
                            }
                            visit(img, beta.powi(k as i32));
                        }
                    }
                }
            }
        }
    }
}

/// Hann-windowed sinc interpolator over `[-32, 32]` samples.
struct KernelTable {
    cos_k: Vec<f64>,
    sin_k: Vec<f64>,
}

impl KernelTable {
    fn new() -> Self {
        let w = KERNEL_HALF_WIDTH as f64;
        let offsets = -(KERNEL_HALF_WIDTH as i64)..=KERNEL_HALF_WIDTH as i64;
        Self {
            cos_k: offsets.clone().map(|k| (PI * k as f64 / w).cos()).collect(),
            sin_k: offsets.map(|k| (PI * k as f64 / w).sin()).collect(),
        }
    }

    fn accumulate(&self, h: &mut [f64], delay: f64, gain: f64) {
        let half = KERNEL_HALF_WIDTH as i64;
        let base = delay.floor() as i64;
        let frac = delay - base as f64;
        if base - half >= h.len() as i64 {
            return;
        }
        let w = KERNEL_HALF_WIDTH as f64;
        let (sd, cd) = (PI * frac / w).sin_cos();
        let sin_pi_frac = (PI * frac).sin();
        for (idx, k) in (-half..=half).enumerate() {
            let t = base + k;
            if t < 0 || t >= h.len() as i64 {
                continue;
            }
            let u = k as f64 - frac;
            if u.abs() >= w {
                continue;
            }
            // sin(pi (k - frac)) = -(-1)^k sin(pi frac)
            let sinc = if u.abs() < 1e-12 {
                1.0
            } else {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                sign * sin_pi_frac / (PI * u)
            };
            // cos(pi (k - frac) / w) by angle subtraction.
            let cos_u = self.cos_k[idx] * cd + self.sin_k[idx] * sd;
            h[t as usize] += gain * 0.5 * (1.0 + cos_u) * sinc;
        }
    }
}

/// Linear convolution of `signal` with `filter`, truncated to
/// `signal.len()` samples.
pub fn convolve(signal: &[f64], filter: &[f64]) -> Vec<f64> {
    let out_len = signal.len();
    if out_len == 0 || filter.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (signal.len() + filter.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spec = |x: &[f64]| {
        let mut buf = vec![0.0; n];
        buf[..x.len()].copy_from_slice(x);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("sizes match plan");
        out
    };
    let a = spec(signal);
    let b = spec(filter);
    let mut prod: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let last = prod.len() - 1;
    prod[0].im = 0.0;
    prod[last].im = 0.0;
    let mut out = vec![0.0; n];
    inv.process(&mut prod, &mut out).expect("sizes match plan");
    out.truncate(out_len);
    let scale = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Convolves each mono source with its filters. The mixture is the exact
/// sample-wise sum of the returned images.
pub fn mix(
    sources: &[MultichannelAudio],
    rirs: &ImpulseResponseSet,
) -> Result<(MultichannelAudio, Vec<MultichannelAudio>)> {
    if sources.len() != rirs.num_sources() {
        return Err(Error::Dimension(format!(
            "{} sources but {} filter sets",
            sources.len(),
            rirs.num_sources()
        )));
    }
    let first = sources
        .first()
        .ok_or_else(|| Error::Precondition("no sources to mix".into()))?;
    for (j, s) in sources.iter().enumerate() {
        if s.num_channels() != 1 {
            return Err(Error::Dimension(format!("source {j} is not mono")));
        }
        if s.num_samples() != first.num_samples() {
            return Err(Error::Dimension(format!(
                "source {j} has {} samples, source 0 has {}",
                s.num_samples(),
                first.num_samples()
            )));
        }
        if s.sample_rate() != rirs.sample_rate {
            return Err(Error::Dimension(format!(
                "source {j} at {} Hz, filters at {} Hz",
                s.sample_rate(),
                rirs.sample_rate
            )));
        }
    }
    let images = sources
        .iter()
        .zip(&rirs.taps)
        .map(|(s, filters)| {
            let chans = filters.iter().map(|h| convolve(s.channel(0), h)).collect();
            MultichannelAudio::new(chans, s.sample_rate())
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = MultichannelAudio::sum(&images)?;
    Ok((mixture, images))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eyring_limits_and_value() {
        let mut room = RoomSpec {
            dims: [5.0, 5.0, 5.0],
            t60: 0.25,
            sound_velocity: 334.0,
        };
        let expect = (-13.82f64 / (0.6 * 334.0 * 0.25)).exp();
        assert!((eyring_beta(&room) - expect).abs() < 1e-15);
        assert!((expect - 0.758_928_048_839_313_7).abs() < 1e-14);
        room.t60 = 0.0;
        assert_eq!(eyring_beta(&room), 0.0);
        room.t60 = 1e9;
        assert!(eyring_beta(&room) > 1.0 - 1e-9);
    }

    #[test]
    fn reverberant_power_behaviour() {
        assert_eq!(reverberant_power_from(0.0, 10.0).unwrap(), 0.0);
        assert!(reverberant_power_from(1.0, 10.0).is_err());
        let mut last = 0.0;
        for k in 1..100 {
            let p = reverberant_power_from(k as f64 / 100.0, 94.0).unwrap();
            assert!(p > last);
            last = p;
        }
        let room = RoomSpec {
            dims: [5.0, 5.0, 5.0],
            t60: 0.25,
            sound_velocity: 334.0,
        };
        let b = eyring_beta(&room);
        let expect = 4.0 * b * b / (150.0 * (1.0 - b * b));
        assert!((reverberant_power(&room).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.036_222_229_914_665_49).abs() < 1e-14);
    }

    #[test]
    fn coherence_values() {
        assert_eq!(diffuse_coherence(0.0, 1000.0, 334.0), 1.0);
        assert_eq!(diffuse_coherence(0.2, 0.0, 334.0), 1.0);
        assert!(diffuse_coherence(0.05, 334.0 / 0.1, 334.0).abs() < 1e-15);
        let arg = 2.0 * PI * 1000.0 * 0.05 / 334.0;
        assert!((diffuse_coherence(0.05, 1000.0, 334.0) - arg.sin() / arg).abs() < 1e-15);
        assert!((diffuse_coherence(0.05, 1000.0, 334.0) - 0.858_933_386_988_767_4).abs() < 1e-14);
    }

    fn anechoic_room() -> RoomSpec {
        RoomSpec {
            dims: [5.0, 4.0, 3.0],
            t60: 0.0,
            sound_velocity: 334.0,
        }
    }

    #[test]
    fn anechoic_direct_path_integer_delay() {
        // 48 samples at 16 kHz and 334 m/s is exactly 1.002 m.
        let scene = SceneSpec {
            sources: vec![[1.0, 2.0, 1.5]],
            mics: vec![[2.002, 2.0, 1.5]],
        };
        let rir = simulate_rir(&anechoic_room(), &scene, 16000, Some(200)).unwrap();
        let h = &rir.taps[0][0];
        let (peak_idx, peak) = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let gain = 1.0 / ((4.0 * PI).sqrt() * 1.002);
        assert_eq!(peak_idx, 48);
        assert!((peak - gain).abs() < 1e-6 * gain);
        let off_peak: f64 = h.iter().enumerate().filter(|(t, _)| *t != 48).map(|(_, v)| v.abs()).sum();
        assert!(off_peak < 1e-6 * gain);
    }

    #[test]
    fn fractional_delay_conserves_energy() {
        let room = anechoic_room();
        for (k, x) in [1.013, 1.29, 1.5, 1.77].iter().enumerate() {
            let scene = SceneSpec {
                sources: vec![[0.5, 2.0, 1.5]],
                mics: vec![[0.5 + x, 2.0, 1.5]],
            };
            let rir = simulate_rir(&room, &scene, 16000, Some(300)).unwrap();
            let energy: f64 = rir.taps[0][0].iter().map(|v| v * v).sum();
            let dc: f64 = rir.taps[0][0].iter().sum();
            let gain = 1.0 / ((4.0 * PI).sqrt() * x);
            assert!((dc / gain - 1.0).abs() < 0.01, "case {k}: dc {}", dc / gain);
            // The windowed kernel rolls off near Nyquist for half-sample delays.
            assert!((energy / (gain * gain) - 1.0).abs() < 0.05, "case {k}: {}", energy / (gain * gain));
        }
    }

    #[test]
    fn inverse_distance_law() {
        let room = anechoic_room();
        let energy = |x: f64| {
            let scene = SceneSpec {
                sources: vec![[0.5, 2.0, 1.5]],
                mics: vec![[0.5 + x, 2.0, 1.5]],
            };
            let rir = simulate_rir(&room, &scene, 16000, Some(400)).unwrap();
            rir.taps[0][0].iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let ratio = energy(0.9) / energy(1.8);
        assert!((ratio - 2.0).abs() < 0.01);
    }

    #[test]
    fn rejects_outside_source() {
        let scene = SceneSpec {
            sources: vec![[6.0, 1.0, 1.0]],
            mics: vec![[1.0, 1.0, 1.0]],
        };
        assert!(matches!(
            simulate_rir(&anechoic_room(), &scene, 16000, None),
            Err(Error::OutsideRoom { what: "source", .. })
        ));
    }

    #[test]
    fn default_length_follows_t60() {
        let room = RoomSpec::default();
        let scene = SceneSpec::circular([2.5, 1.5, 1.4], 0.2, 1.2, &[0.0]);
        assert_eq!(default_rir_length(&room, &scene, 16000), 4800);
        let mut dry = room;
        dry.t60 = 0.0;
        assert!(default_rir_length(&dry, &scene, 16000) > 58);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let s: Vec<f64> = (0..300).map(|t| ((t * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let h: Vec<f64> = (0..37).map(|t| 1.0 / (1.0 + t as f64)).collect();
        let y = convolve(&s, &h);
        for t in 0..s.len() {
            let direct: f64 = (0..h.len()).filter(|&k| k <= t).map(|k| h[k] * s[t - k]).sum();
            assert!((y[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn mixing_identities() {
        let impulse = {
            let mut v = vec![0.0; 64];
            v[0] = 1.0;
            MultichannelAudio::mono(v, 8000).unwrap()
        };
        let rirs = ImpulseResponseSet {
            taps: vec![
                vec![vec![0.5, 0.25, 0.0], vec![0.0, 1.0, -1.0]],
                vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            ],
            sample_rate: 8000,
        };
        let other = MultichannelAudio::mono((0..64).map(|t| (t as f64).sin()).collect(), 8000).unwrap();
        let (mixture, images) = mix(&[impulse, other.clone()], &rirs).unwrap();
        for (got, want) in images[0].channel(0).iter().zip([0.5, 0.25, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in images[0].channel(1).iter().zip([0.0, 1.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (a, b) in images[1].channel(0).iter().zip(other.channel(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum = MultichannelAudio::sum(&images).unwrap();
        assert_eq!(sum, mixture);
    }

    #[test]
    fn mixing_rejects_mismatch() {
        let rirs = ImpulseResponseSet {
            taps: vec![vec![vec![1.0]]],
            sample_rate: 8000,
        };
        let s = MultichannelAudio::mono(vec![0.0; 10], 16000).unwrap();
        assert!(mix(&[s], &rirs).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let scene = SceneSpec::circular([2.5, 1.5, 1.4], 0.05, 0.5, &[-30.0, 40.0]);
        let room = RoomSpec {
            t60: 0.05,
            ..RoomSpec::default()
        };
        let rir = simulate_rir(&room, &scene, 16000, None).unwrap();
        let back = ImpulseResponseSet::from_bundle(
            &TensorBundle::decode(&rir.to_bundle().unwrap().encode()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, rir);
    }
}
