//! WAV input/output: 16-bit PCM or 32-bit float, any channel count.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavSpec, WavWriter};
use ndarray::{Array1, Array2};

/// Reads a WAV file into `samples x channels` and returns the sample rate.
pub fn read_wav(path: &Path) -> Result<(Array2<f64>, f64)> {
    let mut reader = hound::WavReader::open(path)
        .with_context(|| format!("cannot open input WAV {}", path.display()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        bail!("{}: zero channels", path.display());
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("error decoding {}", path.display()))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("error decoding {}", path.display()))?,
        (format, bits) => bail!(
            "{}: unsupported sample format {format:?}/{bits} bits (use 16-bit PCM or float32)",
            path.display()
        ),
    };
    let frames = interleaved.len() / channels;
    if frames == 0 {
        bail!("{}: no samples", path.display());
    }
    let data = Array2::from_shape_fn((frames, channels), |(n, ch)| interleaved[n * channels + ch]);
    Ok((data, spec.sample_rate as f64))
}

/// Writes a mono float32 WAV.
pub fn write_wav_mono(path: &Path, signal: &Array1<f64>, sample_rate: f64) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)
        .with_context(|| format!("cannot create output WAV {}", path.display()))?;
    for &v in signal.iter() {
        writer.write_sample(v as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes a multichannel float32 WAV (`samples x channels`).
pub fn write_wav_multi(path: &Path, signal: &Array2<f64>, sample_rate: f64) -> Result<()> {
    let spec = WavSpec {
        channels: signal.ncols() as u16,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)
        .with_context(|| format!("cannot create output WAV {}", path.display()))?;
    for n in 0..signal.nrows() {
        for ch in 0..signal.ncols() {
            writer.write_sample(signal[(n, ch)] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
