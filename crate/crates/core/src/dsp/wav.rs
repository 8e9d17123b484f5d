use std::path::Path;

use super::AudioSignal;
use crate::error::{Error, Result};

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Reads a RIFF/WAVE file holding 16-bit little-endian mono PCM.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    parse_wav(&std::fs::read(path)?)
}

pub(crate) fn parse_wav(b: &[u8]) -> Result<AudioSignal> {
    if b.len() < 12 {
        return Err(Error::Format("wav: file shorter than a RIFF header".into()));
    }
    if &b[0..4] != b"RIFF" {
        return Err(Error::Format(format!(
            "wav: expected RIFF magic, found {:?}",
            String::from_utf8_lossy(&b[0..4])
        )));
    }
    if &b[8..12] != b"WAVE" {
        return Err(Error::Format("wav: RIFF form type is not WAVE".into()));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let size = u32_at(b, pos + 4) as usize;
        let body = pos + 8;
        let end = body.saturating_add(size).min(b.len());
        match id {
            b"fmt " => {
                if end - body < 16 {
                    return Err(Error::Format("wav: fmt chunk too short".into()));
                }
                fmt = Some((u16_at(b, body), u16_at(b, body + 2), u32_at(b, body + 4), u16_at(b, body + 14)));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::Format("wav: data chunk before fmt chunk".into()))?;
                if format != 1 {
                    return Err(Error::UnsupportedFormat(format!("wav: encoding {format} is not PCM")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!("wav: {channels} channels, only mono is read")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!("wav: {bits}-bit samples, only 16-bit is read")));
                }
                let samples = b[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return AudioSignal::new(samples, rate);
            }
            _ => {}
        }
        pos = body.saturating_add(size + (size & 1));
    }
    Err(Error::Format("wav: no data chunk".into()))
}

/// Writes 16-bit mono PCM, clipping to the representable range.
pub fn write_wav(path: &Path, signal: &AudioSignal) -> Result<()> {
    let n = signal.samples.len();
    let mut b = Vec::with_capacity(44 + 2 * n);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + 2 * n as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&signal.sample_rate.to_le_bytes());
    b.extend_from_slice(&(signal.sample_rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(2 * n as u32).to_le_bytes());
    for &s in &signal.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        b.extend_from_slice(&q.to_le_bytes());
    }
    Ok(std::fs::write(path, b)?)
}
