//! Checkpoint file format.
//!
//! Layout: magic `CATCKPT1` (8 bytes), u32 little-endian header length, a
//! UTF-8 JSON header (architecture, class names, spectrogram settings, seed,
//! resolved run configuration, and a named-tensor index with shapes and byte
//! offsets), then the tensor values as little-endian f32 blobs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, ParamSet};
use crate::dsp::SpecConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CATCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    class_names: Vec<String>,
    spec: SpecConfig,
    seed: u64,
    run_config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to reproduce its preprocessing.
pub struct Checkpoint {
    pub arch: Arch,
    pub class_names: Vec<String>,
    pub spec: SpecConfig,
    pub seed: u64,
    pub run_config: serde_json::Value,
    pub params: ParamSet<f32>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, t) in ckpt.params.iter() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len() as u64,
        });
        offset += t.len() as u64 * 4;
    }
    let header = Header {
        arch: ckpt.arch.clone(),
        class_names: ckpt.class_names.clone(),
        spec: ckpt.spec,
        seed: ckpt.seed,
        run_config: ckpt.run_config.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::format(path, format!("header encode: {e}")))?;

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    let mut blob = Vec::with_capacity(offset as usize);
    for (_, t) in ckpt.params.iter() {
        for &v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&blob).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(Error::format(path, "bad magic (want CATCKPT1)"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::format(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::format(path, format!("header decode: {e}")))?;
    let blob = &bytes[12 + header_len..];

    let mut params = ParamSet::new();
    for entry in &header.tensors {
        let start = entry.offset as usize;
        let end = start + entry.len as usize * 4;
        if end > blob.len() {
            return Err(Error::format(path, format!("tensor `{}` out of bounds", entry.name)));
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.push(&entry.name, Tensor::new(entry.shape.clone(), data)?);
    }
    Ok(Checkpoint {
        arch: header.arch,
        class_names: header.class_names,
        spec: header.spec,
        seed: header.seed,
        run_config: header.run_config,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CatConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = CatConfig {
            conv_channels: (4, 8),
            embed_dim: 8,
            num_layers: 1,
            input_size: 16,
            num_classes: 3,
            ..CatConfig::default()
        };
        let arch = Arch::Cat(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = arch.init_params::<f32>(&mut rng).unwrap();
        let ckpt = Checkpoint {
            arch,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            spec: SpecConfig::default(),
            seed: 5,
            run_config: serde_json::json!({"why": "test"}),
            params: params.clone(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.class_names, ckpt.class_names);
        assert_eq!(loaded.seed, 5);
        assert_eq!(loaded.arch.arch_name(), "cat");
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT____").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
