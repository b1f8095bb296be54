//! Deterministic pseudo-synthesizer corpus generator.
//!
//! Each pseudo-synthesizer is a procedural signal generator whose fingerprint
//! lives in the frequency domain — comb-filter ripple, spectral tilt, and a
//! noise notch — so the class signal survives the spectrogram pipeline rather
//! than riding on waveform trivia. Generation is parallel per file with
//! per-file derived seeds (`seed ^ file_index`), so output is byte-identical
//! for any thread count.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Manifest, ManifestEntry, Split};
use crate::dsp::{write_wav, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Spectral fingerprint of one pseudo-synthesizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFingerprint {
    pub name: String,
    /// Comb-filter delay; the spectrum ripples with period `1000/comb_period_ms` Hz.
    pub comb_period_ms: f64,
    /// Harmonic amplitude slope relative to the fundamental.
    pub spectral_tilt_db_per_octave: f64,
    /// Center of the notch carved into the additive noise floor.
    pub noise_notch_hz: f64,
    /// Scale of the per-harmonic random phase walk.
    pub phase_jitter: f64,
}

/// Corpus-wide generation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToySpec {
    /// Known classes first, then unknown ones.
    pub fingerprints: Vec<SynthFingerprint>,
    pub f0_range_hz: (f64, f64),
    pub max_harmonic_hz: f64,
    /// Syllabic amplitude-envelope rate.
    pub envelope_hz: f64,
    /// Standard deviation of the additive (notch-filtered) noise floor.
    pub noise_level: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl ToySpec {
    /// A default corpus layout. Known synthesizers sit on an integer
    /// fingerprint grid. Unknown synthesizers are component crossovers of
    /// known classes — the comb period of one class, the tilt of another,
    /// the notch of a third — so a classifier keying on different cues
    /// splits its probability mass instead of extrapolating confidently.
    pub fn default_corpus(known_k: usize, unknown_k: usize, seed: u64) -> Self {
        // comb delays of 4-9 ms put the spectral ripple 3.5-8 frequency rows
        // apart: local texture the conv tokenizer resolves within a patch
        let grid = |g: f64| {
            (
                4.0 + 1.0 * g,
                -12.0 + 2.2 * g,
                700.0 + 420.0 * g,
            )
        };
        let mut fingerprints = Vec::new();
        for i in 0..known_k {
            let (comb, tilt, notch) = grid(i as f64);
            fingerprints.push(SynthFingerprint {
                name: format!("toysynth{i}"),
                comb_period_ms: comb,
                spectral_tilt_db_per_octave: tilt,
                noise_notch_hz: notch,
                phase_jitter: 0.008,
            });
        }
        let k = known_k.max(1);
        for u in 0..unknown_k {
            let (comb, _, _) = grid(((2 * u + 1) % k) as f64);
            let (_, tilt, _) = grid(((2 * u + 4) % k) as f64);
            let (_, _, notch) = grid((3 * u % k) as f64);
            fingerprints.push(SynthFingerprint {
                name: format!("mystery{u}"),
                comb_period_ms: comb,
                spectral_tilt_db_per_octave: tilt,
                noise_notch_hz: notch,
                phase_jitter: 0.012,
            });
        }
        ToySpec {
            fingerprints,
            f0_range_hz: (80.0, 300.0),
            max_harmonic_hz: 4000.0,
            envelope_hz: 4.0,
            noise_level: 0.02,
            duration_s: 1.2,
            seed,
        }
    }

    fn validate(&self, known_k: usize, unknown_k: usize) -> Result<()> {
        if known_k < 2 {
            return Err(Error::Config(format!("known_k {known_k} must be >= 2")));
        }
        if self.fingerprints.len() < known_k + unknown_k {
            return Err(Error::Config(format!(
                "{} fingerprints for {} classes",
                self.fingerprints.len(),
                known_k + unknown_k
            )));
        }
        for (i, a) in self.fingerprints.iter().enumerate() {
            for b in self.fingerprints.iter().skip(i + 1) {
                if (a.comb_period_ms, a.spectral_tilt_db_per_octave, a.noise_notch_hz, a.phase_jitter)
                    == (b.comb_period_ms, b.spectral_tilt_db_per_octave, b.noise_notch_hz, b.phase_jitter)
                {
                    return Err(Error::Validation(format!(
                        "fingerprints `{}` and `{}` are identical",
                        a.name, b.name
                    )));
                }
            }
        }
        if self.f0_range_hz.0 <= 0.0 || self.f0_range_hz.1 <= self.f0_range_hz.0 {
            return Err(Error::Config("bad f0 range".into()));
        }
        let min_len = 0.2;
        if self.duration_s < min_len {
            return Err(Error::Config(format!("duration {} s too short", self.duration_s)));
        }
        Ok(())
    }
}

/// Synthesize one utterance-like signal for a fingerprint.
pub fn synthesize(spec: &ToySpec, fp: &SynthFingerprint, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let fs = SAMPLE_RATE_HZ as f64;
    let n = (spec.duration_s * fs) as usize;

    let f0_a = rng.random_range(spec.f0_range_hz.0..spec.f0_range_hz.1);
    let f0_b = rng.random_range(spec.f0_range_hz.0..spec.f0_range_hz.1);
    let f0_max = f0_a.max(f0_b);
    let k_max = ((spec.max_harmonic_hz / f0_max).floor() as usize).max(1);

    // per-harmonic state: phase, amplitude from the tilt, jitter walk
    let mut phases: Vec<f64> = (0..k_max).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let amps: Vec<f64> = (1..=k_max)
        .map(|k| 10f64.powf(fp.spectral_tilt_db_per_octave * (k as f64).log2() / 20.0))
        .collect();
    let mut jitters = vec![0.0f64; k_max];

    let env_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut harmonic = vec![0.0f64; n];
    for (t, slot) in harmonic.iter_mut().enumerate() {
        if t % 160 == 0 {
            for j in jitters.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *j += fp.phase_jitter * z;
            }
        }
        let frac = t as f64 / n as f64;
        let f0 = f0_a + (f0_b - f0_a) * frac;
        let mut acc = 0.0;
        for k in 0..k_max {
            phases[k] += std::f64::consts::TAU * f0 * (k + 1) as f64 / fs;
            acc += amps[k] * (phases[k] + jitters[k]).sin();
        }
        let env = 0.55 + 0.45 * (std::f64::consts::TAU * spec.envelope_hz * t as f64 / fs + env_phase).sin();
        *slot = acc * env;
    }

    // comb filter: y[t] = 0.5 (x[t] + 0.95 x[t - D])
    let delay = ((fp.comb_period_ms / 1000.0 * fs).round() as usize).max(1);
    let mut signal = vec![0.0f64; n];
    for t in 0..n {
        let delayed = if t >= delay { harmonic[t - delay] } else { 0.0 };
        signal[t] = 0.5 * (harmonic[t] + 0.95 * delayed);
    }

    // notch-filtered noise floor (biquad band-reject at the fingerprint hz)
    let (b0, b1, b2, a1, a2) = notch_coeffs(fp.noise_notch_hz, 4.0, fs);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0, 0.0, 0.0);
    for slot in signal.iter_mut() {
        let white: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_level;
        let filtered = b0 * white + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = white;
        y2 = y1;
        y1 = filtered;
        *slot += filtered;
    }

    let peak = signal.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    let gain = 0.85 / peak;
    signal.iter_mut().for_each(|v| *v *= gain);
    signal.iter().map(|&v| v as f32).collect()
}

fn notch_coeffs(freq_hz: f64, q: f64, fs: f64) -> (f64, f64, f64, f64, f64) {
    let w0 = std::f64::consts::TAU * freq_hz / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    (
        1.0 / a0,
        -2.0 * w0.cos() / a0,
        1.0 / a0,
        -2.0 * w0.cos() / a0,
        (1.0 - alpha) / a0,
    )
}

/// Generate the WAV corpus and its manifest.
///
/// Known classes get `per_class_train` training and `per_class_test` test
/// files; unknown classes get test files only. Returns the written manifest.
pub fn gen_toy(
    spec: &ToySpec,
    known_k: usize,
    unknown_k: usize,
    per_class_train: usize,
    per_class_test: usize,
    out_dir: &Path,
) -> Result<Manifest> {
    spec.validate(known_k, unknown_k)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    struct Job {
        file_index: u64,
        class: usize,
        split: Split,
        known: bool,
        path: PathBuf,
    }

    let mut jobs = Vec::new();
    let mut file_index = 0u64;
    let mut plan = |class: usize, split: Split, known: bool, count: usize, jobs: &mut Vec<Job>| {
        let name = &spec.fingerprints[class].name;
        let tag = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for i in 0..count {
            jobs.push(Job {
                file_index,
                class,
                split,
                known,
                path: out_dir.join(format!("{name}_{tag}{i:04}.wav")),
            });
            file_index += 1;
        }
    };
    for c in 0..known_k {
        plan(c, Split::Train, true, per_class_train, &mut jobs);
        plan(c, Split::Test, true, per_class_test, &mut jobs);
    }
    for u in 0..unknown_k {
        plan(known_k + u, Split::Test, false, per_class_test, &mut jobs);
    }

    jobs.par_iter().try_for_each(|job| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ job.file_index);
        let samples = synthesize(spec, &spec.fingerprints[job.class], &mut rng);
        write_wav(&job.path, &samples)
    })?;

    let entries: Vec<ManifestEntry> = jobs
        .iter()
        .map(|job| ManifestEntry {
            filepath: job.path.clone(),
            synthesizer: spec.fingerprints[job.class].name.clone(),
            split: job.split,
            known: job.known,
        })
        .collect();
    let manifest = Manifest::from_entries(entries)?;
    let comment = format!(
        "catkit gen-toy config={}",
        serde_json::json!({
            "seed": spec.seed,
            "known": known_k,
            "unknown": unknown_k,
            "train_per_class": per_class_train,
            "test_per_class": per_class_test,
            "duration_s": spec.duration_s,
        })
    );
    manifest.save(&out_dir.join("manifest.csv"), &comment)?;
    Ok(manifest)
}
