//! WAV reading and writing (16-bit PCM and 32-bit float, interleaved).

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = WavReader::open(path)?;
    decode(reader, expected_rate)
}

pub fn decode_wav<R: Read>(reader: R, expected_rate: u32) -> Result<Waveform> {
    decode(WavReader::new(reader)?, expected_rate)
}

fn decode<R: Read>(mut reader: WavReader<R>, expected_rate: u32) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(Error::SampleRate {
            found: spec.sample_rate,
            expected: expected_rate,
        });
    }
    let n_ch = usize::from(spec.channels);
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::WavFormat(format!("{bits}-bit {fmt:?}")));
        }
    };
    let len = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(len); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Waveform::new(channels, spec.sample_rate)
}

pub fn encode_wav<W: Write + Seek>(w: &Waveform, out: W, encoding: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: u16::try_from(w.num_channels())
            .map_err(|_| Error::WavFormat("too many channels".into()))?,
        sample_rate: w.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::new(out, spec)?;
    for i in 0..w.len() {
        for c in w.channels() {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
                WavEncoding::Float32 => writer.write_sample(c[i] as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Serializes to an in-memory WAV file.
pub fn wav_bytes(w: &Waveform, encoding: WavEncoding) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    encode_wav(w, &mut cursor, encoding)?;
    Ok(cursor.into_inner())
}

/// Writes a WAV file atomically (temporary file + rename).
pub fn write_wav(path: &Path, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    write_atomic(path, &wav_bytes(w, encoding)?)
}
