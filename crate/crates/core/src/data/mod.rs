//! Dataset manifests, spectrogram dataset loading, and splits.

mod toygen;

pub use toygen::{gen_toy, synthesize, SynthFingerprint, ToySpec};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, SpecConfig, Spectrogram};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(v: &str) -> Result<Self> {
        match v {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub filepath: PathBuf,
    pub synthesizer: String,
    pub split: Split,
    pub known: bool,
}

/// A validated dataset listing. Known synthesizer names map to stable class
/// indices 0..N-1 in first-appearance order; unknown synthesizers appear only
/// in the test split and are never indexed.
#[derive(Clone, Debug)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    class_names: Vec<String>,
}

impl Manifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut class_names: Vec<String> = Vec::new();
        let mut seen_paths: HashSet<PathBuf> = HashSet::new();
        for e in &entries {
            if !e.known && e.split == Split::Train {
                return Err(Error::Validation(format!(
                    "unknown synthesizer `{}` listed in the training split ({})",
                    e.synthesizer,
                    e.filepath.display()
                )));
            }
            if !seen_paths.insert(e.filepath.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate filepath `{}`",
                    e.filepath.display()
                )));
            }
            if e.known && !class_names.iter().any(|n| n == &e.synthesizer) {
                class_names.push(e.synthesizer.clone());
            }
        }
        Ok(Manifest { entries, class_names })
    }

    /// Parse a manifest CSV (`filepath,synthesizer,split,known`); lines
    /// starting with `#` are reproducibility headers and are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::format(path, e.to_string()))?;
            if record.len() != 4 {
                return Err(Error::format(
                    path,
                    format!("expected 4 columns, got {}", record.len()),
                ));
            }
            let known = match &record[3] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(Error::format(path, format!("bad known flag `{other}`")))
                }
            };
            entries.push(ManifestEntry {
                filepath: PathBuf::from(&record[0]),
                synthesizer: record[1].to_string(),
                split: record[2].parse()?,
                known,
            });
        }
        Self::from_entries(entries)
    }

    /// Write the manifest CSV with a reproducibility comment line.
    pub fn save(&self, path: &Path, config_comment: &str) -> Result<()> {
        let mut out = String::new();
        if !config_comment.is_empty() {
            out.push_str("# ");
            out.push_str(config_comment);
            out.push('\n');
        }
        out.push_str("filepath,synthesizer,split,known\n");
        for e in &self.entries {
            let split = match e.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.filepath.display(),
                e.synthesizer,
                split,
                e.known
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, synthesizer: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == synthesizer)
    }

    pub fn train_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }
}

/// One loaded sample: spectrogram, class label (known classes only), and
/// provenance.
pub struct Sample {
    pub spec: Spectrogram,
    /// Class index for known synthesizers, `None` for unknown ones.
    pub label: Option<usize>,
    pub synthesizer: String,
    pub filepath: PathBuf,
}

/// Load spectrograms for one split. Cached `CATSPEC1` files under
/// `cache_dir` are used when present; otherwise the WAV is processed on the
/// fly with `spec_cfg`.
pub fn load_split(
    manifest: &Manifest,
    split: Split,
    cache_dir: Option<&Path>,
    spec_cfg: &SpecConfig,
) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    let entries: Vec<&ManifestEntry> =
        manifest.entries().iter().filter(|e| e.split == split).collect();
    entries
        .par_iter()
        .map(|e| {
            let spec = match cache_dir {
                Some(dir) => {
                    let cached = cache_path(dir, &e.filepath);
                    if cached.exists() {
                        dsp::read_spec_cache(&cached)?
                    } else {
                        compute_spec(&e.filepath, spec_cfg)?
                    }
                }
                None => compute_spec(&e.filepath, spec_cfg)?,
            };
            Ok(Sample {
                spec,
                label: if e.known { manifest.class_index(&e.synthesizer) } else { None },
                synthesizer: e.synthesizer.clone(),
                filepath: e.filepath.clone(),
            })
        })
        .collect()
}

fn compute_spec(path: &Path, cfg: &SpecConfig) -> Result<Spectrogram> {
    let wav = dsp::read_wav(path)?;
    dsp::spectrogram_with(&wav, cfg)
}

/// Compute and cache spectrograms for every manifest entry. Returns the
/// number of files written (existing cache files are kept unless `force`).
pub fn prep_cache(
    manifest: &Manifest,
    cache_dir: &Path,
    spec_cfg: &SpecConfig,
    force: bool,
) -> Result<usize> {
    use rayon::prelude::*;
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    manifest
        .entries()
        .par_iter()
        .map(|e| -> Result<usize> {
            let out = cache_path(cache_dir, &e.filepath);
            if out.exists() && !force {
                return Ok(0);
            }
            let spec = compute_spec(&e.filepath, spec_cfg)?;
            dsp::write_spec_cache(&out, &spec)?;
            Ok(1)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Deterministic cache filename for a source file: stem plus a path hash to
/// avoid collisions between directories.
pub fn cache_path(cache_dir: &Path, source: &Path) -> PathBuf {
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    source.to_string_lossy().hash(&mut hasher);
    let stem = source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    cache_dir.join(format!("{stem}-{:016x}.spec", hasher.finish()))
}

/// Per-class proportional split: returns (kept, held-out) index lists.
/// The held-out count per class is `round(n_c * fraction)`, capped so the
/// kept side stays non-empty. Deterministic for a fixed seed.
pub fn stratified_split(
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for mut idxs in per_class {
        if idxs.is_empty() {
            continue;
        }
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        let take = (((n as f64) * fraction).round() as usize).min(n.saturating_sub(1));
        held.extend_from_slice(&idxs[..take]);
        kept.extend_from_slice(&idxs[take..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}
