//! Argument definitions and config-file resolution.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "catkit", version, about = "Synthetic speech attribution toolkit")]
pub struct Cli {
    /// JSON file supplying default values for flags (explicit flags win).
    /// Keys are long flag names, e.g. {"lr": 0.001, "epochs": 50}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a deterministic pseudo-synthesizer WAV corpus with a manifest.
    GenToy(GenToyArgs),
    /// Compute and cache spectrograms for every manifest entry.
    Prep(PrepArgs),
    /// Train a classifier on the manifest's training split.
    Train(TrainArgs),
    /// Gridsearch the poly-1 epsilon: one training run per value.
    Sweep(SweepArgs),
    /// Closed-set or open-set evaluation of a checkpoint on the test split.
    Eval(EvalArgs),
    /// tSNE embedding of model latents over the test split.
    Embed(EmbedArgs),
    /// Attribute a single WAV file.
    Attribute(AttributeArgs),
}

#[derive(Args)]
pub struct GenToyArgs {
    /// Output directory for WAV files and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of known pseudo-synthesizers (classes 0..known-1).
    #[arg(long)]
    pub known: Option<usize>,
    /// Number of unknown pseudo-synthesizers (test split only).
    #[arg(long)]
    pub unknown: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// Test files per class, for known and unknown classes alike.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Utterance duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache directory for CATSPEC1 spectrogram files.
    #[arg(long)]
    pub cache: PathBuf,
    /// STFT hop in samples.
    #[arg(long)]
    pub hop: Option<usize>,
    /// Which 128 frequency bins to keep: low, high, or center.
    #[arg(long)]
    pub freq_crop: Option<String>,
    /// Recompute files that already exist in the cache.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Spectrogram cache directory from `prep` (WAVs are processed on the
    /// fly when missing).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Architecture: cat, cnn, or mlp.
    #[arg(long)]
    pub arch: Option<String>,
    /// Loss: ce, fl, poly1ce, or poly1fl.
    #[arg(long)]
    pub loss: Option<String>,
    /// Poly-1 epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Focal gamma.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Optimizer: adam or adamw.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CAT embedding width (the second tokenizer conv channel count).
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// CAT tokenizer conv channels as "c1,c2"; c2 must equal embed-dim.
    #[arg(long)]
    pub conv_channels: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub mlp_ratio: Option<f64>,
    #[arg(long)]
    pub drop_path: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// STFT hop (must match the cache, if one is used).
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long)]
    pub freq_crop: Option<String>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV output path.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated epsilon grid.
    #[arg(long)]
    pub epsilons: Option<String>,
    /// Sweep table CSV output path.
    #[arg(long)]
    pub sweep_out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// closed (known classes only) or open (threshold rule, N+1 classes).
    #[arg(long)]
    pub mode: Option<String>,
    /// Open-set confidence threshold T in (0, 1).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// JSON report output path.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional per-sample CSV (path, truth, prediction, p_m).
    #[arg(long)]
    pub per_sample: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Subsample cap before the O(n^2) tSNE.
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Embedding CSV output (sample_path, synthesizer, known_flag, y1, y2).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report with the cluster purity summary.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct AttributeArgs {
    /// 16 kHz mono PCM16 WAV file to attribute.
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Open-set confidence threshold T in (0, 1).
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Values loaded from `--config`; key lookup by long flag name.
pub struct FileConfig {
    values: serde_json::Map<String, serde_json::Value>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        let values = match path {
            None => serde_json::Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let parsed: serde_json::Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                match parsed {
                    serde_json::Value::Object(map) => map,
                    _ => bail!("config {} must be a JSON object", p.display()),
                }
            }
        };
        Ok(FileConfig { values })
    }

    pub fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => Ok(Some(
                serde_json::from_value(v.clone())
                    .with_context(|| format!("config key `{key}`"))?,
            )),
        }
    }

    /// `flag` wins over the config file; otherwise fall back to `default`.
    pub fn resolve<T: serde::de::DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn resolve_opt<T: serde::de::DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}
