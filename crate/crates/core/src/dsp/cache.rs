//! Binary spectrogram cache.
//!
//! Layout: magic `CATSPEC1` (8 bytes), two u32 little-endian dims (rows,
//! cols), then row-major f32 little-endian pixel values.

use std::io::{Read, Write};
use std::path::Path;

use super::{Spectrogram, SPEC_SIZE};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CATSPEC1";

pub fn write_spec_cache(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut out = Vec::with_capacity(16 + spec.pixels().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(SPEC_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(SPEC_SIZE as u32).to_le_bytes());
    for &v in spec.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_spec_cache(path: &Path) -> Result<Spectrogram> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(Error::format(path, "bad magic (want CATSPEC1)"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if rows != SPEC_SIZE || cols != SPEC_SIZE {
        return Err(Error::format(path, format!("dims {rows}x{cols} (want {SPEC_SIZE}x{SPEC_SIZE})")));
    }
    let want = 16 + rows * cols * 4;
    if bytes.len() != want {
        return Err(Error::format(path, format!("{} bytes (want {})", bytes.len(), want)));
    }
    let pixels: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Spectrogram::from_pixels(pixels)
}
