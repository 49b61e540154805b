//! Binary checkpoint container.
//!
//! ```text
//! magic "CNVATTN\0" | u32 version
//! u64 len | TOML header (model config, optimizer scalars)
//! u32 count | per token: u32 len, UTF-8 bytes
//! u32 count | per tensor: u32 name len, name, u32 rank, u64 dims…, f64 data…
//! ```
//! All integers and floats are little-endian. Adam moments are stored as
//! `adam.m/<param>` and `adam.v/<param>`.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::optim::{AdamConfig, Schedule, TrainState};
use crate::train::vocab::Vocab;

const MAGIC: &[u8; 8] = b"CNVATTN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub vocab: Vocab,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: EncoderConfig,
    train: Option<TrainHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainHeader {
    step: u64,
    seed: u64,
    schedule: Schedule,
    adam: AdamConfig,
}

impl Checkpoint {
    pub fn config(&self) -> &EncoderConfig {
        &self.params.config
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.params.config.clone(),
            train: self.train.as_ref().map(|t| TrainHeader {
                step: t.step,
                seed: t.seed,
                schedule: t.schedule,
                adam: t.adam,
            }),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());

        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for t in self.vocab.tokens() {
            put_str(&mut out, t);
        }

        let mut named: Vec<(String, &Tensor)> = self
            .params
            .specs
            .iter()
            .zip(&self.params.tensors)
            .map(|(s, t)| (s.name.clone(), t))
            .collect();
        if let Some(state) = &self.train {
            for (prefix, moments) in [("adam.m/", &state.first_moment), ("adam.v/", &state.second_moment)] {
                for (s, t) in self.params.specs.iter().zip(moments) {
                    named.push((format!("{prefix}{}", s.name), t));
                }
            }
        }
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            put_str(&mut out, &name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = read_u64(&mut r)? as usize;
        let text = read_string(&mut r, len)?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let n_tokens = read_u32(&mut r)? as usize;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
        for _ in 0..n_tokens {
            let l = read_u32(&mut r)? as usize;
            tokens.push(read_string(&mut r, l)?);
        }
        let vocab = Vocab::from_tokens(tokens)?;
        if vocab.len() != header.model.vocab_size {
            return Err(Error::VocabMismatch(format!(
                "checkpoint stores {} tokens but the model expects {}",
                vocab.len(),
                header.model.vocab_size
            )));
        }

        let n_tensors = read_u32(&mut r)? as usize;
        let mut named = Vec::with_capacity(n_tensors.min(1 << 16));
        for _ in 0..n_tensors {
            let l = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, l)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            if numel.checked_mul(8).is_none_or(|b| b > r.len()) {
                return Err(Error::Checkpoint(format!("tensor {name} is truncated")));
            }
            let data = (0..numel)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            named.push((name, t));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }

        let moments = named.iter().position(|(n, _)| n.starts_with("adam."));
        let rest = match moments {
            Some(at) => named.split_off(at),
            None => Vec::new(),
        };
        let params = EncoderParams::from_named(&header.model, named)?;
        let train = match header.train {
            None if rest.is_empty() => None,
            None => return Err(Error::Checkpoint("optimizer moments without optimizer state".into())),
            Some(h) => {
                let count = params.tensors.len();
                if rest.len() != 2 * count {
                    return Err(Error::Checkpoint(format!(
                        "expected {} moment tensors, found {}",
                        2 * count,
                        rest.len()
                    )));
                }
                let mut first = Vec::with_capacity(count);
                let mut second = Vec::with_capacity(count);
                for (k, (name, t)) in rest.into_iter().enumerate() {
                    let (prefix, slot) = if k < count { ("adam.m/", k) } else { ("adam.v/", k - count) };
                    let spec = &params.specs[slot];
                    if name != format!("{prefix}{}", spec.name) || t.shape() != spec.shape {
                        return Err(Error::Checkpoint(format!("unexpected moment tensor {name}")));
                    }
                    if k < count {
                        first.push(t);
                    } else {
                        second.push(t);
                    }
                }
                Some(TrainState {
                    step: h.step,
                    seed: h.seed,
                    schedule: h.schedule,
                    adam: h.adam,
                    first_moment: first,
                    second_moment: second,
                })
            }
        };
        Ok(Self { params, vocab, train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut &[u8], len: usize) -> Result<String> {
    if len > r.len() {
        return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
    }
    let (head, tail) = r.split_at(len);
    *r = tail;
    String::from_utf8(head.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 in checkpoint".into()))
}
