//! Minimal RIFF/WAVE reader and writer for the one format the toolkit
//! accepts: PCM 16-bit signed little-endian, mono, 16 kHz.

use std::io::Read;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const REQUIRED_RATE: u32 = 16_000;

/// Read a mono 16 kHz PCM16 WAV file; samples are scaled to [-1, 1] by
/// division by 32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(Error::format(path, "truncated chunk"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format(path, "fmt chunk too small"));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::format(path, "missing fmt chunk"))?;
    if format != 1 || bits != 16 {
        return Err(Error::format(path, format!("unsupported format {format}/{bits}-bit (want PCM16)")));
    }
    if channels != 1 {
        return Err(Error::format(path, format!("{channels} channels (want mono)")));
    }
    if rate != REQUIRED_RATE {
        return Err(Error::format(path, format!("sample rate {rate} (want {REQUIRED_RATE})")));
    }
    let data = data.ok_or_else(|| Error::format(path, "missing data chunk"))?;

    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    Waveform::new(samples, REQUIRED_RATE)
}

/// Write samples (clamped to [-1, 1)) as a mono 16 kHz PCM16 WAV file.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&REQUIRED_RATE.to_le_bytes());
    out.extend_from_slice(&(REQUIRED_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in samples {
        let q = (v.clamp(-1.0, 1.0 - 1.0 / 32768.0) * 32768.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
