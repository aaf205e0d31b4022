//! Binary checkpoint format: magic bytes, format version, a JSON config
//! block (encoder/classifier config, label order, vocabulary), a named
//! tensor directory with little-endian float32 payloads, and an optional
//! Adam state. Save/load round trips are byte-exact.

use crate::classifier::{MlpConfig, LABEL_ORDER};
use crate::embedding::Vocabulary;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::NliModel;
use crate::training::AdamState;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SSNLICKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    encoder: EncoderConfig,
    mlp: MlpConfig,
    fine_tune: bool,
    label_order: Vec<String>,
    vocab_tokens: Vec<String>,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32_slice<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CheckpointTruncated(format!("while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32_vec<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_checkpoint(
    model: &NliModel<f32>,
    adam: Option<&AdamState<f32>>,
    path: &Path,
) -> Result<()> {
    let bytes = checkpoint_bytes(model, adam)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn checkpoint_bytes(model: &NliModel<f32>, adam: Option<&AdamState<f32>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    write_u32(&mut out, FORMAT_VERSION)?;

    let meta = CheckpointMeta {
        encoder: model.encoder_cfg.clone(),
        mlp: model.mlp_cfg.clone(),
        fine_tune: model.embedding.fine_tune,
        label_order: LABEL_ORDER.iter().map(|s| s.to_string()).collect(),
        vocab_tokens: model.vocab.surface_tokens(),
    };
    let meta_json = serde_json::to_vec(&meta).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    write_u64(&mut out, meta_json.len() as u64)?;
    out.write_all(&meta_json)?;

    write_u64(&mut out, model.store.len() as u64)?;
    for (_, p) in model.store.iter() {
        write_u64(&mut out, p.name.len() as u64)?;
        out.write_all(p.name.as_bytes())?;
        write_u64(&mut out, p.shape.len() as u64)?;
        for &d in &p.shape {
            write_u64(&mut out, d as u64)?;
        }
        write_f32_slice(&mut out, &p.data)?;
    }

    match adam {
        Some(state) => {
            out.write_all(&[1u8])?;
            write_u64(&mut out, state.step)?;
            for idx in 0..model.store.len() {
                write_f32_slice(&mut out, &state.m[idx])?;
                write_f32_slice(&mut out, &state.v[idx])?;
            }
        }
        None => out.write_all(&[0u8])?,
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<(NliModel<f32>, Option<AdamState<f32>>)> {
    let bytes = std::fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<(NliModel<f32>, Option<AdamState<f32>>)> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic bytes")?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat("bad magic bytes".into()));
    }
    let version = read_u32(&mut r, "format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, supported: FORMAT_VERSION });
    }

    let meta_len = read_u64(&mut r, "config length")? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta_bytes, "config block")?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::CheckpointFormat(format!("bad config block: {e}")))?;
    if meta.label_order.iter().map(String::as_str).collect::<Vec<_>>() != LABEL_ORDER {
        return Err(Error::CheckpointFormat(format!(
            "unsupported label order {:?}",
            meta.label_order
        )));
    }

    let vocab = Vocabulary::from_tokens(meta.vocab_tokens);
    let embed_len = vocab.len() * meta.encoder.embed_dim;
    let mut model = NliModel::new(
        vocab,
        meta.encoder,
        meta.mlp,
        vec![0.0f32; embed_len],
        meta.fine_tune,
        0,
    )?;

    let tensor_count = read_u64(&mut r, "tensor count")? as usize;
    let mut filled = vec![false; model.store.len()];
    for _ in 0..tensor_count {
        let name_len = read_u64(&mut r, "tensor name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?;
        let ndim = read_u64(&mut r, "tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r, "tensor dims")? as usize);
        }
        let count: usize = shape.iter().product();
        let data = read_f32_vec(&mut r, count, &format!("tensor {name}"))?;
        let pid = model
            .store
            .id_by_name(&name)
            .ok_or_else(|| Error::UnknownTensor(name.clone()))?;
        let entry = model.store.get_mut(pid);
        if entry.shape != shape {
            return Err(Error::CheckpointFormat(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                shape, entry.shape
            )));
        }
        entry.data = data;
        filled[pid.0] = true;
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::CheckpointFormat(format!(
            "tensor {} missing from checkpoint",
            model.store.get(crate::params::ParamId(missing)).name
        )));
    }

    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag, "optimizer-state flag")?;
    let adam = if flag[0] == 1 {
        let mut state = AdamState::new(&model.store);
        state.step = read_u64(&mut r, "optimizer step")?;
        for idx in 0..model.store.len() {
            let n = state.m[idx].len();
            state.m[idx] = read_f32_vec(&mut r, n, "optimizer first moment")?;
            state.v[idx] = read_f32_vec(&mut r, n, "optimizer second moment")?;
        }
        Some(state)
    } else {
        None
    };
    Ok((model, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Activation;
    use crate::data::{make_batches, synth_generate, vocab_from_examples};
    use crate::embedding::random_embeddings;
    use crate::encoder::ConnectionMode;
    use crate::tensor::Mode;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model() -> NliModel<f32> {
        let data = synth_generate(12, 16, 6, 1).unwrap();
        let vocab = vocab_from_examples(&data).unwrap();
        let encoder_cfg = EncoderConfig {
            mode: ConnectionMode::FullShortcut,
            layer_dims: vec![3, 4],
            embed_dim: 4,
        };
        let mlp_cfg = MlpConfig {
            num_hidden_layers: 1,
            hidden_units: 5,
            activation: Activation::Relu,
            dropout_rate: 0.1,
            num_classes: 3,
        };
        let matrix = random_embeddings(&vocab, 4, 3);
        NliModel::new(vocab, encoder_cfg, mlp_cfg, matrix, true, 7).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = toy_model();
        let adam = AdamState::new(&model.store);
        let bytes1 = checkpoint_bytes(&model, Some(&adam)).unwrap();
        let (loaded, adam2) = load_checkpoint_bytes(&bytes1).unwrap();
        let bytes2 = checkpoint_bytes(&loaded, adam2.as_ref()).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn loaded_model_reproduces_logits() {
        let model = toy_model();
        let bytes = checkpoint_bytes(&model, None).unwrap();
        let (loaded, _) = load_checkpoint_bytes(&bytes).unwrap();
        let data = synth_generate(6, 16, 6, 2).unwrap();
        let batch = &make_batches(&data, &model.vocab, 6, 0)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = model.forward_batch(batch, Mode::Eval, &mut rng).unwrap();
        let b = loaded.forward_batch(batch, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a.mean_loss, b.mean_loss);
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let model = toy_model();
        let mut bytes = checkpoint_bytes(&model, None).unwrap();
        bytes[0] = b'X';
        let err = load_checkpoint_bytes(&bytes).err().unwrap();
        assert!(matches!(err, Error::CheckpointFormat(_)), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let model = toy_model();
        let mut bytes = checkpoint_bytes(&model, None).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        let err = load_checkpoint_bytes(&bytes).err().unwrap();
        assert!(matches!(err, Error::CheckpointVersion { found: 99, .. }), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let model = toy_model();
        let bytes = checkpoint_bytes(&model, None).unwrap();
        let err = load_checkpoint_bytes(&bytes[..bytes.len() / 2]).err().unwrap();
        assert!(matches!(err, Error::CheckpointTruncated(_)), "{err}");
    }

    #[test]
    fn unknown_tensor_name_rejected() {
        let model = toy_model();
        let mut bytes = checkpoint_bytes(&model, None).unwrap();
        // first tensor name is embedding.matrix; corrupt it in place
        let needle = b"embedding.matrix";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[pos] = b'X';
        let err = load_checkpoint_bytes(&bytes).err().unwrap();
        assert!(matches!(err, Error::UnknownTensor(_)), "{err}");
    }
}
