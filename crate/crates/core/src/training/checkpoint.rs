//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ADSP" | u32 version
//! u64 len | config (TOML)
//! u64 len | schema (TOML)
//! u64 len | vocabulary (field,value,index lines)
//! u64 step | u64 span
//! u32 count | count x (u32 rows | u32 cols | rows*cols f64)
//! ```

use std::path::Path;

use crate::data::{Sample, Schema};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::pruner::FactorMethod;

use super::config::TrainConfig;
use super::model::Model;

pub const MAGIC: &[u8; 4] = b"ADSP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub schema: Schema,
    pub vocab: Vocabulary,
    pub model: Model,
    /// Schedule position the parameters were saved at.
    pub step: usize,
    /// Schedule length (`α` reaches its cap at `step == span`).
    pub span: usize,
}

impl Checkpoint {
    /// Factor method used for inference: `α` frozen at the saved schedule
    /// position, which is the fully annealed value for a finished run.
    pub fn inference_method(&self) -> Result<Option<FactorMethod>> {
        self.config.method_at(self.step, self.span)
    }

    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let method = self.inference_method()?;
        self.model.predict(samples, method.as_ref())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for text in [self.config.to_toml(), self.schema.to_toml(), self.vocab.to_text()] {
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.extend_from_slice(&(self.span as u64).to_le_bytes());
        let mats = self.model.to_matrices();
        out.extend_from_slice(&(mats.len() as u32).to_le_bytes());
        for m in &mats {
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::from_toml(&r.text()?)?;
        let schema = Schema::from_toml(&r.text()?)?;
        let vocab = Vocabulary::from_text(&schema, &r.text()?)?;
        let step = r.u64()? as usize;
        let span = r.u64()? as usize;
        let count = r.u32()? as usize;
        let mut mats = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(truncated)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            mats.push(Matrix::from_vec(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after matrices".into()));
        }
        let model = Model::from_matrices(
            mats,
            schema.field_count(),
            schema.domain_fields.len(),
            config.hidden.len() + 1,
            config.method.factor_kind().is_some(),
        )?;
        for (f, t) in model.embeddings.tables().iter().enumerate() {
            if t.rows() != vocab.cardinality(f) + 1 || t.cols() != config.embed_dim {
                return Err(Error::Checkpoint(format!("embedding table {f} does not match the vocabulary")));
            }
        }
        Ok(Checkpoint {
            config,
            schema,
            vocab,
            model,
            step,
            span,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn truncated() -> Error {
    Error::Checkpoint("truncated checkpoint".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String> {
        let n = usize::try_from(self.u64()?).map_err(|_| truncated())?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("section is not UTF-8".into()))
    }
}
