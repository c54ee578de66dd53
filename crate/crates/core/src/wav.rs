//! Mono WAV reading and writing (16-bit PCM or 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result, Waveform};

pub const SAMPLE_RATE: u32 = 16_000;

/// Sample encoding of a written file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Pcm16,
    Float32,
}

/// Reads a mono WAV file at [`SAMPLE_RATE`]; other rates are rejected.
pub fn read(path: impl AsRef<Path>) -> Result<Waveform> {
    read_with_rate(path, Some(SAMPLE_RATE))
}

/// Reads a mono WAV file, checking the sample rate when `expect_rate` is set.
pub fn read_with_rate(path: impl AsRef<Path>, expect_rate: Option<u32>) -> Result<Waveform> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!("{} channels, expected mono", spec.channels)));
    }
    if let Some(want) = expect_rate {
        if spec.sample_rate != want {
            return Err(Error::UnsupportedSampleRate { got: spec.sample_rate, want });
        }
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write(path: impl AsRef<Path>, wave: &Waveform, encoding: Encoding) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match encoding {
            Encoding::Pcm16 => 16,
            Encoding::Float32 => 32,
        },
        sample_format: match encoding {
            Encoding::Pcm16 => SampleFormat::Int,
            Encoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    match encoding {
        Encoding::Pcm16 => {
            for &v in wave.samples() {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)?;
            }
        }
        Encoding::Float32 => {
            for &v in wave.samples() {
                writer.write_sample(v as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
