//! Binary checkpoint format.
//!
//! ```text
//! "DTTSCKPT"  u32 version  u64 meta_len  meta (TOML)
//! u64 n_tensors
//!   per tensor: u32 name_len  name  u64 rows  u64 cols
//!               f32 data ×4 (parameter, first moment, second moment, accumulator)
//! sha256 of everything above
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainState, Trainer};
use crate::autodiff::ParamStore;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DTTSCKPT";
pub const VERSION: u32 = 1;
const DIGEST: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    step: u64,
    updates: u64,
    accum_batches: usize,
    n_train: usize,
    vocab: Vec<String>,
    train: TrainConfig,
}

/// Everything a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub n_train: usize,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn of(trainer: &Trainer) -> Self {
        Self {
            train: trainer.cfg.clone(),
            vocab: trainer.vocab.clone(),
            n_train: trainer.n_train,
            state: trainer.state.clone(),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Trainer::from_parts(self.train, self.vocab, self.n_train, self.state)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.state;
        let meta = Meta {
            step: s.step,
            updates: s.updates,
            accum_batches: s.accum_batches,
            n_train: self.n_train,
            vocab: self.vocab.symbols().to_vec(),
            train: self.train.clone(),
        };
        let meta = toml::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + meta.len() + 16 * s.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(s.params.len() as u64).to_le_bytes());
        for (i, (name, p)) in s.params.iter().enumerate() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(p.cols() as u64).to_le_bytes());
            for t in [p, &s.m[i], &s.v[i], &s.accum[i]] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(what.to_string());
        if bytes.len() < MAGIC.len() + 4 + DIGEST || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupt file)"));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {VERSION}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta =
            std::str::from_utf8(r.take(meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let meta: Meta = toml::from_str(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = r.u64()? as usize;
        let mut params = ParamStore::new();
        let (mut m, mut v, mut accum) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name =
                std::str::from_utf8(r.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let mut tensors = (0..4)
                .map(|_| r.tensor(rows, cols))
                .collect::<Result<Vec<_>>>()?
                .into_iter();
            if params.find(name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            params.add(name, tensors.next().unwrap());
            m.push(tensors.next().unwrap());
            v.push(tensors.next().unwrap());
            accum.push(tensors.next().unwrap());
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after the tensors"));
        }
        Ok(Self {
            train: meta.train,
            vocab: Vocabulary::new(meta.vocab)?,
            n_train: meta.n_train,
            state: TrainState {
                params,
                m,
                v,
                accum,
                accum_batches: meta.accum_batches,
                step: meta.step,
                updates: meta.updates,
            },
        })
    }

    /// Writes through a temporary file so a crash never leaves a partial
    /// checkpoint under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor<f32>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(rows, cols, data))
    }
}
