use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// On-disk sample encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

fn map_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(m) => Error::WavFormat {
            field: "header",
            detail: m.to_string(),
        },
        hound::Error::TooWide => Error::WavFormat {
            field: "bits_per_sample",
            detail: "sample wider than declared".into(),
        },
        hound::Error::UnfinishedSample => Error::WavFormat {
            field: "data",
            detail: "sample count is not a multiple of channels".into(),
        },
        hound::Error::Unsupported => Error::WavFormat {
            field: "format_tag",
            detail: "unsupported encoding".into(),
        },
        hound::Error::InvalidSampleFormat => Error::WavFormat {
            field: "sample_format",
            detail: "sample format does not match header".into(),
        },
    }
}

/// Reads a PCM16 or float32 WAV file; channels are averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavFormat {
            field: "channels",
            detail: "zero channels".into(),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::WavFormat {
                field: "bits_per_sample",
                detail: format!(
                    "{bits}-bit {fmt:?} samples; only 16-bit PCM and 32-bit float are supported"
                ),
            })
        }
    };
    let samples = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate).map_err(|e| Error::WavFormat {
        field: "data",
        detail: e.to_string(),
    })
}

/// Writes a mono WAV file. PCM16 samples are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_err(path, e))?;
    for &v in w.samples() {
        let r = match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            }
            WavEncoding::Float32 => writer.write_sample(v as f32),
        };
        r.map_err(|e| map_err(path, e))?;
    }
    writer.finalize().map_err(|e| map_err(path, e))
}
