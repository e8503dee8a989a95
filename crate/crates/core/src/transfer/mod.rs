//! Checkpoint files and dictionary surgery for fine-tuning across token sets.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "ACTA"                     magic
//! u32                        format version
//! u32 n, n bytes             JSON header: model config and training metadata
//! u32 n, n bytes             dictionary, codec text format
//! u32 count                  tensor directory, one entry per tensor:
//!   u32 n, n bytes             name
//!   u32 rank, rank × u64       dims
//!   u64                        byte offset into the payload
//! u64 n, n bytes             payload: f64 values, IEEE-754
//! u32                        CRC-32 of the payload
//! ```

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, TokenDictionary, TokenId};
use crate::model::{
    is_token_indexed, ModelConfig, ModelError, Network, ParamStore, Tensor, EMBEDDING,
    PREDICTION_BIAS, PREDICTION_WEIGHT,
};

pub const MAGIC: &[u8; 4] = b"ACTA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, this reader handles {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("payload checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("tensor {name}: {message}")]
    Shape { name: String, message: String },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Dictionary(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epoch: usize,
    /// Annotation strategy of the training targets, when known.
    pub strategy: Option<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub dictionary: TokenDictionary,
    pub params: ParamStore,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
}

impl ModelCheckpoint {
    /// Checks that the tensors match the config and dictionary size.
    pub fn new(
        config: ModelConfig,
        dictionary: TokenDictionary,
        params: ParamStore,
        meta: TrainingMeta,
    ) -> Result<Self, CheckpointError> {
        Network::from_params(config.clone(), dictionary.len(), params.clone())?;
        Ok(Self {
            config,
            dictionary,
            params,
            meta,
        })
    }

    pub fn from_network(
        net: &Network,
        dictionary: &TokenDictionary,
        meta: TrainingMeta,
    ) -> Result<Self, CheckpointError> {
        if net.vocab() != dictionary.len() {
            return Err(CheckpointError::Shape {
                name: EMBEDDING.into(),
                message: format!(
                    "network has {} tokens, dictionary {}",
                    net.vocab(),
                    dictionary.len()
                ),
            });
        }
        Ok(Self {
            config: net.config().clone(),
            dictionary: dictionary.clone(),
            params: net.params().clone(),
            meta,
        })
    }

    pub fn network(&self) -> Result<Network, CheckpointError> {
        Ok(Network::from_params(
            self.config.clone(),
            self.dictionary.len(),
            self.params.clone(),
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
        })
        .expect("header serializes");
        put_block(&mut out, &header);
        put_block(&mut out, self.dictionary.to_text().as_bytes());

        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in self.params.iter() {
            put_block(&mut out, t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.len() as u64;
        }
        let mut payload = Vec::with_capacity(offset as usize);
        for t in self.params.iter() {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header: Header = serde_json::from_slice(r.block("header")?)?;
        let dict_text = std::str::from_utf8(r.block("dictionary")?)
            .map_err(|e| CodecError::Invalid(format!("dictionary is not UTF-8: {e}")))?;
        let dictionary = TokenDictionary::from_text(dict_text)?;

        let count = r.u32("tensor directory")? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = String::from_utf8(r.block("tensor name")?.to_vec()).map_err(|_| {
                CheckpointError::Shape {
                    name: "?".into(),
                    message: "name is not UTF-8".into(),
                }
            })?;
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("tensor dims")? as usize);
            }
            let offset = r.u64("tensor offset")?;
            entries.push((name, shape, offset));
        }
        let len = r.u64("payload length")? as usize;
        let payload = r.take(len, "payload")?;
        let stored = r.u32("checksum")?;
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }

        let mut params = ParamStore::new();
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let start = offset as usize;
            let end = start
                .checked_add(8 * n)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| CheckpointError::Shape {
                    name: name.clone(),
                    message: format!("{} values at offset {} exceed the payload", n, offset),
                })?;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if params.index_of(&name).is_some() {
                return Err(CheckpointError::Shape {
                    name,
                    message: "listed twice".into(),
                });
            }
            params.push(Tensor { name, shape, data });
        }
        Self::new(header.config, dictionary, params, header.meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_block(out: &mut Vec<u8>, data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn block(&mut self, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }
}

/// Re-indexes the token-indexed tensors of `donor` to `target`. Tokens in
/// both dictionaries (matched by name) keep their embedding row, prediction
/// column and bias verbatim; tokens new to `target` get fresh values drawn
/// uniformly from ±1/√model_dim in target id order; donor-only tokens are
/// dropped. Every other tensor and the metadata are copied unchanged.
pub fn adapt_dictionary(
    donor: &ModelCheckpoint,
    target: &TokenDictionary,
    init_seed: u64,
) -> Result<ModelCheckpoint, CheckpointError> {
    let d = donor.config.model_dim;
    let v_old = donor.dictionary.len();
    let v = target.len();
    let source: Vec<Option<usize>> = (0..v as TokenId)
        .map(|id| {
            let name = target.token_name(id).expect("id within dictionary");
            donor.dictionary.id_of_name(&name).map(|i| i as usize)
        })
        .collect();
    if source[target.eot() as usize].is_none() {
        return Err(CheckpointError::Dictionary(CodecError::Invalid(
            "EOT missing from donor dictionary".into(),
        )));
    }

    let emb = tensor(&donor.params, EMBEDDING, &[v_old, d])?;
    let pw = tensor(&donor.params, PREDICTION_WEIGHT, &[d, v_old])?;
    let pb = tensor(&donor.params, PREDICTION_BIAS, &[v_old])?;

    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut new_emb = Tensor::zeros(EMBEDDING, vec![v, d]);
    let mut new_pw = Tensor::zeros(PREDICTION_WEIGHT, vec![d, v]);
    let mut new_pb = Tensor::zeros(PREDICTION_BIAS, vec![v]);
    for (t, src) in source.iter().enumerate() {
        match *src {
            Some(s) => {
                new_emb.data[t * d..(t + 1) * d].copy_from_slice(&emb.data[s * d..(s + 1) * d]);
                for k in 0..d {
                    new_pw.data[k * v + t] = pw.data[k * v_old + s];
                }
                new_pb.data[t] = pb.data[s];
            }
            None => {
                let fresh = Tensor::uniform("", vec![2 * d + 1], bound, &mut rng);
                new_emb.data[t * d..(t + 1) * d].copy_from_slice(&fresh.data[..d]);
                for k in 0..d {
                    new_pw.data[k * v + t] = fresh.data[d + k];
                }
                new_pb.data[t] = fresh.data[2 * d];
            }
        }
    }

    let mut params = ParamStore::new();
    for t in donor.params.iter() {
        params.push(match t.name.as_str() {
            EMBEDDING => new_emb.clone(),
            PREDICTION_WEIGHT => new_pw.clone(),
            PREDICTION_BIAS => new_pb.clone(),
            _ => t.clone(),
        });
    }
    ModelCheckpoint::new(
        donor.config.clone(),
        target.clone(),
        params,
        donor.meta.clone(),
    )
}

fn tensor<'a>(
    params: &'a ParamStore,
    name: &str,
    shape: &[usize],
) -> Result<&'a Tensor, CheckpointError> {
    let i = params.expect(name, shape)?;
    Ok(&params.tensors()[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenStatus {
    /// In both; embedding row, prediction column and bias bit-identical.
    KeptExact,
    /// In both, but some of its weights differ.
    KeptChanged,
    /// Only in the second checkpoint.
    New,
    /// Only in the first checkpoint.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDiff {
    pub name: String,
    /// Largest absolute difference; for token-indexed tensors, over shared
    /// tokens. `None` when the tensor is missing on one side or shapes differ.
    pub max_abs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDiff {
    pub token: String,
    pub status: TokenStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDiff {
    pub tensors: Vec<TensorDiff>,
    pub tokens: Vec<TokenDiff>,
}

impl CheckpointDiff {
    pub fn count(&self, status: TokenStatus) -> usize {
        self.tokens.iter().filter(|t| t.status == status).count()
    }

    pub fn status_of(&self, token: &str) -> Option<TokenStatus> {
        self.tokens
            .iter()
            .find(|t| t.token == token)
            .map(|t| t.status)
    }
}

struct TokenWeights<'a> {
    dict: &'a TokenDictionary,
    d: usize,
    emb: Option<&'a Tensor>,
    pw: Option<&'a Tensor>,
    pb: Option<&'a Tensor>,
}

impl<'a> TokenWeights<'a> {
    fn of(c: &'a ModelCheckpoint) -> Self {
        Self {
            dict: &c.dictionary,
            d: c.config.model_dim,
            emb: c.params.get(EMBEDDING),
            pw: c.params.get(PREDICTION_WEIGHT),
            pb: c.params.get(PREDICTION_BIAS),
        }
    }

    /// Embedding row, then prediction column, then bias.
    fn weights(&self, id: usize) -> Vec<f64> {
        let v = self.dict.len();
        let mut out = Vec::with_capacity(2 * self.d + 1);
        if let Some(e) = self.emb {
            out.extend_from_slice(&e.data[id * self.d..(id + 1) * self.d]);
        }
        if let Some(p) = self.pw {
            out.extend((0..self.d).map(|k| p.data[k * v + id]));
        }
        if let Some(b) = self.pb {
            out.push(b.data[id]);
        }
        out
    }
}

/// Compares two checkpoints tensor by tensor and token by token.
pub fn diff_checkpoints(a: &ModelCheckpoint, b: &ModelCheckpoint) -> CheckpointDiff {
    let wa = TokenWeights::of(a);
    let wb = TokenWeights::of(b);
    let shared_dim = a.config.model_dim == b.config.model_dim;

    let mut tokens = Vec::new();
    let mut token_max = 0.0f64;
    for id in 0..b.dictionary.len() {
        let name = b
            .dictionary
            .token_name(id as TokenId)
            .expect("id within dictionary");
        let status = match a.dictionary.id_of_name(&name) {
            None => TokenStatus::New,
            Some(ia) if shared_dim => {
                let (x, y) = (wa.weights(ia as usize), wb.weights(id));
                let diff = x
                    .iter()
                    .zip(&y)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max);
                token_max = token_max.max(diff);
                if x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()) {
                    TokenStatus::KeptExact
                } else {
                    TokenStatus::KeptChanged
                }
            }
            Some(_) => TokenStatus::KeptChanged,
        };
        tokens.push(TokenDiff {
            token: name,
            status,
        });
    }
    for id in 0..a.dictionary.len() {
        let name = a
            .dictionary
            .token_name(id as TokenId)
            .expect("id within dictionary");
        if b.dictionary.id_of_name(&name).is_none() {
            tokens.push(TokenDiff {
                token: name,
                status: TokenStatus::Dropped,
            });
        }
    }

    let mut tensors = Vec::new();
    for t in a.params.iter() {
        let max_abs = match b.params.get(&t.name) {
            Some(_) if is_token_indexed(&t.name) => shared_dim.then_some(token_max),
            Some(u) if u.shape == t.shape => Some(
                t.data
                    .iter()
                    .zip(&u.data)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        };
        tensors.push(TensorDiff {
            name: t.name.clone(),
            max_abs,
        });
    }
    for t in b.params.iter() {
        if a.params.get(&t.name).is_none() {
            tensors.push(TensorDiff {
                name: t.name.clone(),
                max_abs: None,
            });
        }
    }
    CheckpointDiff { tensors, tokens }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FieldKey;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk();
        c.model_dim = 8;
        c.ffn_dim = 16;
        c.decoder_layers = 1;
        for s in &mut c.conv {
            s.channels = 4;
        }
        c.conv.last_mut().unwrap().channels = 8;
        c
    }

    fn field_markers() -> Vec<String> {
        FieldKey::ALL
            .iter()
            .map(|k| k.as_str().to_string())
            .collect()
    }

    fn checkpoint(dict: TokenDictionary, seed: u64) -> ModelCheckpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(&tiny(), dict.len(), &mut rng).unwrap();
        ModelCheckpoint::from_network(
            &net,
            &dict,
            TrainingMeta {
                seed,
                epoch: 3,
                strategy: Some("diplomatic".into()),
                note: None,
            },
        )
        .unwrap()
    }

    fn abc() -> TokenDictionary {
        TokenDictionary::new(vec!['a', 'b', 'c'], vec!["nom".into(), "date".into()]).unwrap()
    }

    fn bcd() -> TokenDictionary {
        TokenDictionary::new(vec!['b', 'c', 'd'], field_markers()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = checkpoint(bcd(), 1);
        let bytes = c.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn distinct_load_errors() {
        let bytes = checkpoint(bcd(), 1).to_bytes();
        let mut corrupt = bytes.clone();
        let n = corrupt.len();
        corrupt[n - 20] ^= 0x40;
        assert!(matches!(
            ModelCheckpoint::from_bytes(&corrupt),
            Err(CheckpointError::Checksum { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            ModelCheckpoint::from_bytes(&v2),
            Err(CheckpointError::Version {
                found: 2,
                expected: 1
            })
        ));
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        assert!(matches!(
            ModelCheckpoint::from_bytes(b"PK\x03\x04xxxx"),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut c = checkpoint(bcd(), 1);
        let t = c.params.get_mut("dec.norm.gamma").unwrap();
        t.shape = vec![4, 2];
        assert!(matches!(
            ModelCheckpoint::from_bytes(&c.to_bytes()),
            Err(CheckpointError::Model(ModelError::Shape { .. }))
        ));
    }

    #[test]
    fn surgery_keeps_shared_tokens() {
        let donor = checkpoint(abc(), 2);
        let out = adapt_dictionary(&donor, &bcd(), 9).unwrap();
        let diff = diff_checkpoints(&donor, &out);
        for t in ["c:b", "c:c", "<eot>"] {
            assert_eq!(diff.status_of(t), Some(TokenStatus::KeptExact), "{t}");
        }
        assert_eq!(diff.status_of("c:d"), Some(TokenStatus::New));
        assert_eq!(diff.count(TokenStatus::New), 10);
        assert_eq!(diff.status_of("c:a"), Some(TokenStatus::Dropped));
        assert_eq!(diff.status_of("m:nom"), Some(TokenStatus::Dropped));
        for t in &diff.tensors {
            assert_eq!(t.max_abs, Some(0.0), "{}", t.name);
        }
        // idempotent
        assert_eq!(adapt_dictionary(&out, &bcd(), 9).unwrap(), out);
    }

    #[test]
    fn identity_surgery() {
        let donor = checkpoint(bcd(), 4);
        let out = adapt_dictionary(&donor, &bcd(), 1).unwrap();
        assert_eq!(out.to_bytes(), donor.to_bytes());
        assert!(diff_checkpoints(&donor, &out)
            .tokens
            .iter()
            .all(|t| t.status == TokenStatus::KeptExact));
    }

    #[test]
    fn changed_rows_are_flagged() {
        let a = checkpoint(bcd(), 4);
        let mut b = a.clone();
        b.params.get_mut(EMBEDDING).unwrap().data[0] += 1e-3;
        let diff = diff_checkpoints(&a, &b);
        assert_eq!(diff.status_of("c:b"), Some(TokenStatus::KeptChanged));
        assert_eq!(diff.count(TokenStatus::KeptChanged), 1);
    }
}
