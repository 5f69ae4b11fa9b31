//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes   "LUSCKPT\0"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON: model config, preprocessing, backbone identity, tensor index
//! payload    f64 LE, head tensors in index order
//! checksum   32 bytes, SHA-256 of everything above
//! ```
//!
//! Backbone weights are not embedded. A seeded backbone is rebuilt from its
//! seed; a file-backed one is reloaded from `backbone_weights`. Either way the
//! rebuilt parameters must hash to the recorded digest.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ModelError, RecurrentHead, Result};
use crate::preprocess::PreprocessConfig;

const MAGIC: &[u8; 8] = b"LUSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BackboneIdentity {
    kind: String,
    input_side: usize,
    feature_dim: usize,
    digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    preprocess: PreprocessConfig,
    backbone: BackboneIdentity,
    tensors: Vec<TensorEntry>,
}

fn tensor_index(head: &RecurrentHead) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for (i, l) in head.layers.iter().enumerate() {
        out.push(TensorEntry { name: format!("gru{i}.kernel"), shape: l.w.shape().to_vec() });
        out.push(TensorEntry { name: format!("gru{i}.recurrent_kernel"), shape: l.u.shape().to_vec() });
        out.push(TensorEntry { name: format!("gru{i}.bias"), shape: l.b.shape().to_vec() });
        out.push(TensorEntry { name: format!("gru{i}.recurrent_bias"), shape: l.rb.shape().to_vec() });
    }
    out.push(TensorEntry { name: "dense.kernel".into(), shape: head.dense_w.shape().to_vec() });
    out.push(TensorEntry { name: "dense.bias".into(), shape: vec![1] });
    out
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        model_config: model.config.clone(),
        preprocess: model.preprocess.clone(),
        backbone: BackboneIdentity {
            kind: model.backbone.kind().id().to_string(),
            input_side: model.backbone.input_side(),
            feature_dim: model.backbone.feature_dim(),
            digest: model.backbone.digest().to_string(),
        },
        tensors: tensor_index(&model.head),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(json.len() + 8 * model.head.param_count() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in model.head.to_flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    let io_err = |source| ModelError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    f.flush().map_err(io_err)
}

fn config_matches(expected: &ModelConfig, stored: &ModelConfig) -> bool {
    let mut e = expected.clone();
    if e.feature_dim.is_none() {
        e.feature_dim = stored.feature_dim;
    }
    &e == stored
}

/// Load a checkpoint. When `expected` is given it must agree with the
/// recorded config (an unset `feature_dim` matches anything).
pub fn load_model(path: &Path, expected: Option<&ModelConfig>) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    let bad = |reason: String| ModelError::Checkpoint { path: path.to_path_buf(), reason };

    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(bad("checksum mismatch (truncated or corrupt)".into()));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_bytes = body.get(20..20 + header_len).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| bad(format!("header: {e}")))?;

    if let Some(exp) = expected {
        if !config_matches(exp, &header.model_config) {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint has {:?}, requested {:?}",
                header.model_config, exp
            )));
        }
    }

    let backbone = header.model_config.build_backbone()?;
    if backbone.digest() != header.backbone.digest {
        return Err(bad("backbone weights differ from the ones recorded at save time".into()));
    }
    if backbone.feature_dim() != header.backbone.feature_dim || backbone.input_side() != header.backbone.input_side {
        return Err(bad("backbone geometry mismatch".into()));
    }

    let mut head = RecurrentHead::new(
        backbone.feature_dim(),
        &header.model_config.recurrent_layers,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let index = tensor_index(&head);
    if index.len() != header.tensors.len()
        || index.iter().zip(&header.tensors).any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(bad("tensor index does not match the configured head".into()));
    }
    let payload = &body[20 + header_len..];
    if payload.len() != head.param_count() * 8 {
        return Err(bad(format!("payload holds {} bytes, expected {}", payload.len(), head.param_count() * 8)));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    head.set_flat(&flat);

    Ok(Model {
        config: header.model_config,
        preprocess: header.preprocess,
        backbone,
        head,
    })
}
