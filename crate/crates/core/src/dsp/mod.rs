//! Waveform-to-spectrogram pipeline.
//!
//! Speech signals are analyzed with a 32 ms periodic Hann window (512 samples
//! at 16 kHz) shifted by 8 ms (128 samples), converted to decibels, cropped or
//! padded to a 128x128 grid (frequency rows x time columns), and min-max
//! normalized to [0, 1]. All functions here are pure and thread-safe.

mod cache;
mod fft;
mod wav;

pub use cache::{read_spec_cache, write_spec_cache};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Required input sampling rate.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Output spectrogram side length (frequency rows and time columns).
pub const SPEC_SIZE: usize = 128;
/// Decibel floor applied before the logarithm: 20*log10(1e-10) = -200 dB.
pub const DB_FLOOR: f32 = -200.0;
const MAG_FLOOR: f64 = 1e-10;

/// A mono speech signal at 16 kHz with amplitudes in roughly [-1, 1].
#[derive(Clone, Debug)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::InvalidArgument(format!(
                "sample rate {} Hz (must be {})",
                sample_rate_hz, SAMPLE_RATE_HZ
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty waveform".into()));
        }
        Ok(Waveform { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
}

/// A 128x128 grid of values in [0, 1]; row 0 is the lowest frequency band,
/// columns are 32 ms time blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pixels: Vec<f32>,
}

impl Spectrogram {
    /// Validate dimensions and the [0, 1] range.
    pub fn from_pixels(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != SPEC_SIZE * SPEC_SIZE {
            return Err(Error::Shape(format!(
                "spectrogram needs {} pixels, got {}",
                SPEC_SIZE * SPEC_SIZE,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("spectrogram pixel outside [0, 1]".into()));
        }
        Ok(Spectrogram { pixels })
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Pixel at (frequency row, time column).
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * SPEC_SIZE + col]
    }
}

/// Which 128 of the 257 one-sided frequency bins survive the crop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqCrop {
    /// Bins 0..128 (0-4 kHz, the perceptually dominant band).
    #[default]
    Low,
    /// The highest 128 bins.
    High,
    /// The middle 128 bins.
    Center,
}

impl std::str::FromStr for FreqCrop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(FreqCrop::Low),
            "high" => Ok(FreqCrop::High),
            "center" => Ok(FreqCrop::Center),
            other => Err(Error::Config(format!("unknown freq-crop `{other}`"))),
        }
    }
}

/// STFT analysis parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpecConfig {
    /// Analysis window length in samples (32 ms at 16 kHz).
    pub win_len: usize,
    /// Window shift in samples (8 ms at 16 kHz).
    pub hop: usize,
    /// FFT length; must equal `win_len`.
    pub fft_len: usize,
    pub freq_crop: FreqCrop,
}

impl Default for SpecConfig {
    fn default() -> Self {
        SpecConfig { win_len: 512, hop: 128, fft_len: 512, freq_crop: FreqCrop::Low }
    }
}

impl SpecConfig {
    fn validate(&self) -> Result<()> {
        if self.win_len < 2 || !self.win_len.is_power_of_two() {
            return Err(Error::Config(format!(
                "win_len {} must be a power of two >= 2",
                self.win_len
            )));
        }
        if self.fft_len != self.win_len {
            return Err(Error::Config(format!(
                "fft_len {} must equal win_len {}",
                self.fft_len, self.win_len
            )));
        }
        if self.hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        if self.win_len / 2 + 1 < SPEC_SIZE {
            return Err(Error::Config(format!(
                "win_len {} yields fewer than {} frequency bins",
                self.win_len, SPEC_SIZE
            )));
        }
        Ok(())
    }
}

/// Periodic Hann window: `w[k] = 0.5 * (1 - cos(2 pi k / n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("hann_window: n {} < 2", n)));
    }
    Ok((0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
        .collect())
}

/// Frame count for a signal of `len` samples: `floor((len - win) / hop) + 1`.
pub fn frame_count(len: usize, win_len: usize, hop: usize) -> usize {
    if len < win_len {
        0
    } else {
        (len - win_len) / hop + 1
    }
}

/// Short-time Fourier transform magnitude.
///
/// Returns `frames x (win_len/2 + 1)` non-negative magnitudes. Tail samples
/// that do not fill a whole window are dropped.
pub fn stft_magnitude(w: &Waveform, cfg: &SpecConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let samples = w.samples();
    if samples.len() < cfg.win_len {
        return Err(Error::TooShort { got: samples.len(), need: cfg.win_len });
    }
    let window = hann_window(cfg.win_len)?;
    let frames = frame_count(samples.len(), cfg.win_len, cfg.hop);
    use rayon::prelude::*;
    Ok((0..frames)
        .into_par_iter()
        .map(|f| {
            let start = f * cfg.hop;
            let buf: Vec<f64> = samples[start..start + cfg.win_len]
                .iter()
                .zip(window.iter())
                .map(|(&x, &w)| x as f64 * w)
                .collect();
            fft::real_magnitude(&buf)
        })
        .collect())
}

/// `20 * log10(max(mag, 1e-10))` elementwise; floor is -200 dB.
pub fn to_decibels(mag: &[Vec<f64>]) -> Vec<Vec<f32>> {
    mag.iter()
        .map(|frame| {
            frame.iter().map(|&m| (20.0 * m.max(MAG_FLOOR).log10()) as f32).collect()
        })
        .collect()
}

/// Crop/pad a `frames x bins` dB grid to 128x128 and min-max normalize.
///
/// Keeps 128 frequency bins (per `freq_crop`) as rows and the first 128
/// frames as columns, padding missing columns with the -200 dB floor. A
/// constant grid maps to all zeros.
pub fn shape_and_normalize(db: &[Vec<f32>], freq_crop: FreqCrop) -> Result<Spectrogram> {
    if db.is_empty() {
        return Err(Error::InvalidArgument("shape_and_normalize: no frames".into()));
    }
    let bins = db[0].len();
    if bins < SPEC_SIZE {
        return Err(Error::Shape(format!("{} frequency bins < {}", bins, SPEC_SIZE)));
    }
    let bin0 = match freq_crop {
        FreqCrop::Low => 0,
        FreqCrop::High => bins - SPEC_SIZE,
        FreqCrop::Center => (bins - SPEC_SIZE) / 2,
    };

    // [freq row][time col] with floor padding for missing frames
    let mut grid = vec![DB_FLOOR; SPEC_SIZE * SPEC_SIZE];
    for (col, frame) in db.iter().take(SPEC_SIZE).enumerate() {
        if frame.len() != bins {
            return Err(Error::Shape("ragged dB grid".into()));
        }
        for row in 0..SPEC_SIZE {
            grid[row * SPEC_SIZE + col] = frame[bin0 + row];
        }
    }

    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &grid {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range > 0.0 {
        for v in &mut grid {
            *v = ((*v - lo) / range).clamp(0.0, 1.0);
        }
    } else {
        grid.fill(0.0);
    }
    Spectrogram::from_pixels(grid)
}

/// Full pipeline: STFT magnitude, decibels, crop/pad, normalize.
pub fn spectrogram(w: &Waveform) -> Result<Spectrogram> {
    spectrogram_with(w, &SpecConfig::default())
}

/// [`spectrogram`] with explicit analysis parameters.
pub fn spectrogram_with(w: &Waveform, cfg: &SpecConfig) -> Result<Spectrogram> {
    let mag = stft_magnitude(w, cfg)?;
    let db = to_decibels(&mag);
    shape_and_normalize(&db, cfg.freq_crop)
}
