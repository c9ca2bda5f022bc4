//! WAV ingestion and the little-endian feature record format.
//!
//! A record is an 8-byte header (`u32` rows, `u32` columns) followed by
//! `rows × columns` row-major `f32` values.

use std::fs;
use std::path::Path;

use super::resample::resample;
use super::Waveform;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::SAMPLE_RATE;

/// Reads a mono 16-bit PCM WAV, resampling to 16 kHz when needed.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Input(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
    };
    let samples = resample(&samples, spec.sample_rate, SAMPLE_RATE);
    Ok(Waveform {
        samples,
        sample_rate: SAMPLE_RATE,
    })
}

/// Writes 16-bit PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn encode_record<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.len());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

pub fn decode_record(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        return Err(corrupt("shorter than the 8-byte header".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| corrupt("header overflows".into()))?;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "{rows}x{cols} needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::from_vec(rows, cols, data))
}

pub fn write_record<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_record(t)).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_record(&bytes, path)
}
