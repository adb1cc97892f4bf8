//! Multichannel time-domain audio and RIFF WAV input/output.
//!
//! Only 16-bit integer PCM and 32-bit IEEE float PCM are accepted. Integer
//! samples are scaled by 1/32768 so that full scale maps into [-1, 1).

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek};
use std::path::Path;

use crate::error::{Error, Result};

/// A block of audio: `channels[i][t]`, all channels of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelAudio {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelAudio {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Precondition("audio needs at least one channel".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Precondition("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::Dimension(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn zeros(num_channels: usize, num_samples: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; num_samples]; num_channels], sample_rate)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|x| x * x).sum()
    }

    /// Sample-wise sum of several blocks with identical shape.
    pub fn sum<'a>(items: impl IntoIterator<Item = &'a MultichannelAudio>) -> Result<Self> {
        let mut iter = items.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Precondition("cannot sum an empty list".into()))?;
        let mut acc = first.clone();
        for other in iter {
            acc.add_assign(other)?;
        }
        Ok(acc)
    }

    pub fn add_assign(&mut self, other: &MultichannelAudio) -> Result<()> {
        if other.num_channels() != self.num_channels()
            || other.num_samples() != self.num_samples()
        {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} audio to {}x{}",
                other.num_channels(),
                other.num_samples(),
                self.num_channels(),
                self.num_samples()
            )));
        }
        for (dst, src) in self.channels.iter_mut().zip(&other.channels) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (i, ch) in self.channels.iter().enumerate() {
            if let Some(t) = ch.iter().position(|x| !x.is_finite()) {
                return Err(Error::Precondition(format!(
                    "non-finite sample at channel {i}, index {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelAudio> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let size = file.metadata().map(|m| m.len()).unwrap_or(u64::MAX);
    decode_wav(BufReader::new(file), size)
}

/// Decodes a complete WAV file held in memory.
pub fn read_wav_bytes(bytes: &[u8]) -> Result<MultichannelAudio> {
    decode_wav(Cursor::new(bytes), bytes.len() as u64)
}

fn decode_wav<R: Read + Seek>(reader: R, byte_len: u64) -> Result<MultichannelAudio> {
    let mut wav = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = wav.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav("zero channels".into()));
    }
    if spec.sample_rate == 0 {
        return Err(Error::MalformedWav("zero sample rate".into()));
    }
    let declared = wav.len() as usize;
    if declared % channels != 0 {
        return Err(Error::MalformedWav(format!(
            "{declared} samples do not divide into {channels} channels"
        )));
    }
    let bytes_per_sample = (spec.bits_per_sample as u64).div_ceil(8).max(1);
    if declared as u64 * bytes_per_sample > byte_len {
        return Err(Error::MalformedWav(format!(
            "header declares {declared} samples but the file holds {byte_len} bytes"
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => wav
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => wav
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{format:?} with {bits} bits")));
        }
    };
    if interleaved.len() != declared {
        return Err(Error::MalformedWav(format!(
            "expected {declared} samples, decoded {}",
            interleaved.len()
        )));
    }

    let frames = declared / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (dst, &s) in out.iter_mut().zip(frame) {
            dst.push(s);
        }
    }
    MultichannelAudio::new(out, spec.sample_rate)
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAV variant".into()),
        hound::Error::IoError(io) => Error::MalformedWav(io.to_string()),
        other => Error::MalformedWav(other.to_string()),
    }
}

pub fn write_wav(path: impl AsRef<Path>, audio: &MultichannelAudio) -> Result<()> {
    write_wav_with(path, audio, WavEncoding::Float32)
}

pub fn write_wav_with(
    path: impl AsRef<Path>,
    audio: &MultichannelAudio,
    encoding: WavEncoding,
) -> Result<()> {
    let path = path.as_ref();
    audio.check_finite()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_wav(BufWriter::new(file), audio, encoding).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::MalformedWav(other.to_string()),
    })
}

/// Encodes to an in-memory WAV image.
pub fn write_wav_bytes(audio: &MultichannelAudio, encoding: WavEncoding) -> Result<Vec<u8>> {
    audio.check_finite()?;
    let mut buf = Cursor::new(Vec::new());
    encode_wav(&mut buf, audio, encoding).map_err(|e| Error::MalformedWav(e.to_string()))?;
    Ok(buf.into_inner())
}

fn encode_wav<W: std::io::Write + Seek>(
    writer: W,
    audio: &MultichannelAudio,
    encoding: WavEncoding,
) -> std::result::Result<(), hound::Error> {
    let num_channels = u16::try_from(audio.num_channels()).map_err(|_| hound::Error::Unsupported)?;
    let spec = match encoding {
        WavEncoding::Pcm16 => hound::WavSpec {
            channels: num_channels,
            sample_rate: audio.sample_rate(),
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        },
        WavEncoding::Float32 => hound::WavSpec {
            channels: num_channels,
            sample_rate: audio.sample_rate(),
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::new(writer, spec)?;
    for t in 0..audio.num_samples() {
        for ch in audio.channels() {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (ch[t] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v)?;
                }
                WavEncoding::Float32 => w.write_sample(ch[t] as f32)?,
            }
        }
    }
    w.finalize()
}
