//! Versioned binary checkpoint.
//!
//! ```text
//! magic    8 bytes   "SKIPTAG\0"
//! version  u32 LE
//! length   u64 LE    manifest byte length
//! manifest JSON      dims, mode, tagset, POS vocabulary, tensor shapes,
//!                    embedding words and fingerprint
//! payload  f64 LE    parameter tensors in manifest order, then the
//!                    embedding table row-major
//! digest   32 bytes  SHA-256 of the payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::TagSet;
use crate::corpus::Embeddings;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Tagger, Vocab};
use crate::trainer::TrainingConfig;

pub const MAGIC: &[u8; 8] = b"SKIPTAG\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub tagset: TagSet,
    pub pos_vocab: Vocab,
    pub tensors: Vec<TensorEntry>,
    pub embedding_dim: usize,
    pub embedding_words: Vec<String>,
    pub embedding_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::ModelIncompatible(msg.into())
}

pub fn to_bytes(tagger: &Tagger, training: Option<&TrainingConfig>) -> Result<Vec<u8>> {
    let manifest = Manifest {
        model: tagger.config,
        tagset: tagger.tagset.clone(),
        pos_vocab: tagger.pos_vocab.clone(),
        tensors: tagger
            .params
            .named()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        embedding_dim: tagger.embeddings.dim(),
        embedding_words: tagger.embeddings.words().to_vec(),
        embedding_fingerprint: tagger.embeddings.fingerprint(),
        training: training.cloned(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut payload = Vec::with_capacity(8 * (tagger.params.num_values() + tagger.embeddings.vectors().len()));
    for t in tagger.params.tensors() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in tagger.embeddings.vectors() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(json.len() + payload.len() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| incompatible("truncated checkpoint"))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn read_f64s(bytes: &[u8], at: &mut usize, n: usize) -> Result<Vec<f64>> {
    let raw = take(
        bytes,
        at,
        n.checked_mul(8).ok_or_else(|| incompatible("tensor too large"))?,
    )?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Tagger, Manifest)> {
    let mut at = 0;
    if take(bytes, &mut at, 8)? != MAGIC {
        return Err(incompatible("not a skiptag checkpoint"));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(incompatible(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| incompatible("manifest too large"))?;
    let manifest: Manifest =
        serde_json::from_slice(take(bytes, &mut at, len)?).map_err(|e| incompatible(format!("bad manifest: {e}")))?;
    let payload_start = at;

    let cfg = manifest.model;
    cfg.features.validate().map_err(|e| incompatible(e.to_string()))?;
    if cfg.features.word_dim != manifest.embedding_dim {
        return Err(incompatible("word_dim differs from the embedding dimension"));
    }
    let mut params = ModelParams::init(&cfg.features, manifest.pos_vocab.len(), manifest.tagset.len(), 0);
    let expected: Vec<(String, usize, usize)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.rows(), t.cols()))
        .collect();
    let found: Vec<(String, usize, usize)> = manifest
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.rows, t.cols))
        .collect();
    if expected != found {
        return Err(incompatible(
            "tensor layout does not match the declared dimensions and tag set",
        ));
    }
    for t in params.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&read_f64s(bytes, &mut at, n)?);
    }
    let vectors = read_f64s(bytes, &mut at, manifest.embedding_words.len() * manifest.embedding_dim)?;
    let payload = &bytes[payload_start..at];
    let digest = take(bytes, &mut at, 32)?;
    if at != bytes.len() {
        return Err(incompatible("trailing bytes after checkpoint"));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(incompatible("payload checksum mismatch"));
    }
    let embeddings = Embeddings::from_parts(manifest.embedding_dim, manifest.embedding_words.clone(), vectors)?;
    if embeddings.fingerprint() != manifest.embedding_fingerprint {
        return Err(incompatible("embedding fingerprint mismatch"));
    }
    let tagger = Tagger {
        config: cfg,
        params,
        embeddings,
        pos_vocab: manifest.pos_vocab.clone(),
        tagset: manifest.tagset.clone(),
    };
    Ok((tagger, manifest))
}

pub fn save(path: &Path, tagger: &Tagger, training: Option<&TrainingConfig>) -> Result<()> {
    fs::write(path, to_bytes(tagger, training)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Tagger, Manifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::EncoderMode;

    fn tagger() -> Tagger {
        let emb = Embeddings::random(["a", "b", "c"], 4, 2);
        let mut cfg = ModelConfig::new(4, EncoderMode::Skip, 0.2, 9);
        cfg.features.hidden_dim = 3;
        Tagger::new(cfg, emb, Vocab::build(["NN", "DT"]), TagSet::part_whole()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let t = tagger();
        let bytes = to_bytes(&t, Some(&TrainingConfig::default())).unwrap();
        let (back, manifest) = from_bytes(&bytes).unwrap();
        assert_eq!(back.params, t.params);
        assert_eq!(back.embeddings, t.embeddings);
        assert_eq!(back.tagset, t.tagset);
        assert_eq!(manifest.training, Some(TrainingConfig::default()));
        assert_eq!(to_bytes(&back, manifest.training.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&tagger(), None).unwrap();
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 40] ^= 1;
        assert!(matches!(from_bytes(&bad), Err(Error::ModelIncompatible(_))));
        assert!(matches!(from_bytes(&bytes[..n - 1]), Err(Error::ModelIncompatible(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(from_bytes(&magic), Err(Error::ModelIncompatible(_))));
        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(from_bytes(&version), Err(Error::ModelIncompatible(_))));
    }
}
