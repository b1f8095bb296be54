//! Synthetic speech attribution toolkit.
//!
//! The pipeline: raw 16 kHz speech waveforms are converted into normalized
//! 128x128 spectrograms ([`dsp`]), classified by a compact attribution
//! transformer or one of two deep baselines ([`models`]) trained with
//! cross-entropy, focal, or poly-1 losses ([`losses`], [`train`]), attributed
//! to known synthesizers or flagged as unknown by probability thresholding
//! ([`eval`]), and separated per-synthesizer with an exact tSNE over the
//! model's latent space ([`embed`]). [`data`] handles dataset manifests and a
//! deterministic pseudo-synthesizer corpus generator for desk-scale
//! experiments. All numerics run on a small reverse-mode autodiff tensor
//! engine ([`tensor`]).

pub mod data;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod tensor;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
