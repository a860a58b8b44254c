//! Model checkpoint file format.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! magic "STFM" | version=1 | L | H | D | V | T_max |
//! all parameter tensors as little-endian IEEE-754 32-bit floats,
//! row-major, in the canonical tensor order of
//! TransformerModel::tensors()
//! ```
//!
//! Weights are held in 64-bit precision in memory and rounded to 32-bit on
//! save; save → load → save therefore reproduces files byte-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::net::TransformerModel;
use crate::Real;

const MAGIC: [u8; 4] = *b"STFM";
const VERSION: u32 = 1;

fn write_checkpoint(model: &TransformerModel, w: &mut impl Write) -> Result<()> {
    w.write_all(&MAGIC)?;
    for dim in [
        VERSION,
        model.config.num_layers as u32,
        model.config.num_heads as u32,
        model.config.head_dim as u32,
        model.config.vocab_size as u32,
        model.config.max_context as u32,
    ] {
        w.write_all(&dim.to_le_bytes())?;
    }
    for tensor in model.tensors() {
        for &v in tensor.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes `model` to `path` in the checkpoint format.
pub fn save_checkpoint(model: &TransformerModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// SHA-256 of the checkpoint byte stream of `model`; equal to hashing the
/// file produced by [`save_checkpoint`]. Probe banks store this to tie
/// probes to the weights they were trained on.
pub fn model_hash(model: &TransformerModel) -> [u8; 32] {
    struct HashWriter(Sha256);
    impl Write for HashWriter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.update(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let mut w = HashWriter(Sha256::new());
    write_checkpoint(model, &mut w).expect("in-memory hashing cannot fail");
    w.0.finalize().into()
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated while reading {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TransformerModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated while reading magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected \"STFM\"",
            magic
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config = ModelConfig {
        num_layers: read_u32(&mut r, "num_layers")? as usize,
        num_heads: read_u32(&mut r, "num_heads")? as usize,
        head_dim: read_u32(&mut r, "head_dim")? as usize,
        vocab_size: read_u32(&mut r, "vocab_size")? as usize,
        max_context: read_u32(&mut r, "max_context")? as usize,
    };
    config.validate()?;

    let mut model = TransformerModel::zeros(config)?;
    let mut buf = [0u8; 4];
    for (ti, tensor) in model.tensors_mut().into_iter().enumerate() {
        for v in tensor.data_mut() {
            r.read_exact(&mut buf).map_err(|_| {
                Error::Format(format!("checkpoint truncated inside tensor {ti}"))
            })?;
            *v = f32::from_le_bytes(buf) as Real;
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("checkpoint holds non-finite weights".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::{forward_step, KvCache};
    use tempfile::tempdir;

    fn tiny_model(seed: u64) -> TransformerModel {
        TransformerModel::init(
            ModelConfig {
                num_layers: 2,
                num_heads: 2,
                head_dim: 4,
                vocab_size: 8,
                max_context: 16,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.stfm");
        let p2 = dir.path().join("b.stfm");
        let model = tiny_model(31);
        save_checkpoint(&model, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn round_trip_is_exact_at_32_bit_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(32);
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for (a, b) in loaded.tensors().iter().zip(model.tensors()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert_eq!(x as f32, y as f32); // exact at 32-bit
            }
        }
    }

    #[test]
    fn forward_after_round_trip_matches_within_1e6() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(33);
        let tokens = [1u32, 6, 2, 4];

        let mut cache = KvCache::new(&model.config);
        let mut before = Vec::new();
        for &t in &tokens {
            before.push(forward_step(&model, &mut cache, t, None).unwrap().logits);
        }

        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let mut cache = KvCache::new(&loaded.config);
        for (i, &t) in tokens.iter().enumerate() {
            let out = forward_step(&loaded, &mut cache, t, None).unwrap();
            for v in 0..model.config.vocab_size {
                assert!((out.logits[v] - before[i][v]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(34);
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(35);
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // version field
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(36);
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(37);
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("trailing"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn model_hash_equals_hash_of_saved_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stfm");
        let model = tiny_model(38);
        save_checkpoint(&model, &path).unwrap();
        let file_hash: [u8; 32] = Sha256::digest(std::fs::read(&path).unwrap()).into();
        assert_eq!(model_hash(&model), file_hash);
        assert_ne!(model_hash(&model), model_hash(&tiny_model(39)));
    }
}
