//! Adapter checkpoints: four HSB records `W1`, `b1`, `W2`, `b2` in one file.
//!
//! Bias vectors are stored as `1 × len` matrices. Every record is `f64` and
//! carries `d=<d>;r=<r>;alpha=<alpha>` as its model id.

use std::io::Write;
use std::path::Path;

use coda_core::adapter::TENSOR_NAMES;
use coda_core::batch::{Dtype, HiddenStateBatch};
use coda_core::{AdapterParams, Matrix};

use crate::hsb::{self, HsbError};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: AdapterParams,
    /// Inference-time steering strength.
    pub alpha: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Hsb(#[from] HsbError),
    #[error("not an adapter checkpoint: {0}")]
    Malformed(String),
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Hsb(e.into())
    }
}

pub fn model_id(params: &AdapterParams, alpha: f64) -> String {
    format!("d={};r={};alpha={}", params.d(), params.r(), alpha)
}

/// Parses `d=<d>;r=<r>;alpha=<alpha>`.
pub fn parse_model_id(s: &str) -> Option<(usize, usize, f64)> {
    let mut parts = s.split(';');
    let mut field = |key: &str| parts.next()?.strip_prefix(key)?.strip_prefix('=').map(str::to_owned);
    let d = field("d")?.parse().ok()?;
    let r = field("r")?.parse().ok()?;
    let alpha: f64 = field("alpha")?.parse().ok()?;
    if parts.next().is_some() || !alpha.is_finite() {
        return None;
    }
    Some((d, r, alpha))
}

impl Checkpoint {
    pub fn new(params: AdapterParams, alpha: f64) -> Self {
        Self { params, alpha }
    }

    pub fn records(&self) -> Result<Vec<HiddenStateBatch>, CheckpointError> {
        let p = &self.params;
        let model = model_id(p, self.alpha);
        let tensors = [
            p.w1.clone(),
            Matrix::from_vec(1, p.b1.len(), p.b1.clone()).map_err(HsbError::from)?,
            p.w2.clone(),
            Matrix::from_vec(1, p.b2.len(), p.b2.clone()).map_err(HsbError::from)?,
        ];
        tensors
            .into_iter()
            .zip(TENSOR_NAMES)
            .map(|(m, name)| {
                HiddenStateBatch::new(m, name, 0, model.clone(), Dtype::F64)
                    .map_err(|e| CheckpointError::Hsb(e.into()))
            })
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        Ok(self.records()?.iter().flat_map(hsb::encode).collect())
    }

    pub fn write<W: Write + ?Sized>(&self, out: &mut W) -> Result<(), CheckpointError> {
        out.write_all(&self.encode()?)?;
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::from_records(hsb::decode_all(bytes)?)
    }

    pub fn from_records(records: Vec<HiddenStateBatch>) -> Result<Self, CheckpointError> {
        let bad = |m: String| Err(CheckpointError::Malformed(m));
        if records.len() != 4 {
            return bad(format!("expected 4 records, found {}", records.len()));
        }
        let tags: Vec<&str> = records.iter().map(|r| r.domain_tag()).collect();
        if tags != TENSOR_NAMES {
            return bad(format!("expected tags {TENSOR_NAMES:?}, found {tags:?}"));
        }
        let model = records[0].model_id().to_owned();
        if records.iter().any(|r| r.model_id() != model) {
            return bad("records disagree on the model id".into());
        }
        let Some((d, r, alpha)) = parse_model_id(&model) else {
            return bad(format!("model id {model:?} is not d=<d>;r=<r>;alpha=<alpha>"));
        };
        let [w1, b1, w2, b2]: [HiddenStateBatch; 4] = records.try_into().expect("4 records");
        let vector = |b: HiddenStateBatch, len: usize, name: &str| {
            if b.n() != 1 || b.d() != len {
                return Err(CheckpointError::Malformed(format!(
                    "{name} is {}x{}, expected 1x{len}",
                    b.n(),
                    b.d()
                )));
            }
            Ok(b.into_values().into_vec())
        };
        let b1 = vector(b1, r, "b1")?;
        let b2 = vector(b2, d, "b2")?;
        let params = AdapterParams::from_parts(w1.into_values(), b1, w2.into_values(), b2)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if params.d() != d || params.r() != r {
            return bad(format!(
                "tensors are d={} r={}, model id says d={d} r={r}",
                params.d(),
                params.r()
            ));
        }
        Ok(Self { params, alpha })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }
}
