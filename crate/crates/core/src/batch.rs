//! Hidden-state batches and the source / target datasets built from them.
//!
//! A [`HiddenStateBatch`] is an `N×d` matrix of layer activations plus the
//! provenance needed to pair and check files: domain tag, layer index, model
//! id and on-disk dtype. Values are always held as `f64`; a batch whose dtype
//! is [`Dtype::F32`] is quantized to `f32` precision at construction so that
//! writing and re-reading it is lossless.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Element type used when a batch is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Longest tag or model id the on-disk header can carry.
pub const MAX_TEXT_LEN: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateBatch {
    values: Matrix,
    domain_tag: String,
    layer_index: u32,
    model_id: String,
    dtype: Dtype,
}

impl HiddenStateBatch {
    pub fn new(
        values: Matrix,
        domain_tag: impl Into<String>,
        layer_index: u32,
        model_id: impl Into<String>,
        dtype: Dtype,
    ) -> Result<Self> {
        let domain_tag = domain_tag.into();
        let model_id = model_id.into();
        let (n, d) = values.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden-state batch must be at least 1x1, got {n}x{d}"
            )));
        }
        if layer_index > i32::MAX as u32 {
            return Err(Error::InvalidArgument(format!(
                "layer index {layer_index} does not fit the header"
            )));
        }
        for (what, s) in [("domain tag", &domain_tag), ("model id", &model_id)] {
            if s.len() > MAX_TEXT_LEN {
                return Err(Error::InvalidArgument(format!(
                    "{what} is {} bytes, limit is {MAX_TEXT_LEN}",
                    s.len()
                )));
            }
        }
        let values = match dtype {
            Dtype::F64 => values,
            Dtype::F32 => values.map(|x| x as f32 as f64),
        };
        if let Some((row, col)) = values.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self {
            values,
            domain_tag,
            layer_index,
            model_id,
            dtype,
        })
    }

    /// Same provenance, new values (and tag).
    pub fn with_values(&self, values: Matrix, domain_tag: impl Into<String>) -> Result<Self> {
        Self::new(
            values,
            domain_tag,
            self.layer_index,
            self.model_id.clone(),
            self.dtype,
        )
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    pub fn layer_index(&self) -> u32 {
        self.layer_index
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    /// Checks the layer index against the depth of the backbone it came from.
    pub fn check_layer(&self, total_layers: u32) -> Result<()> {
        if self.layer_index >= total_layers {
            return Err(Error::Provenance(format!(
                "layer {} out of range for a {total_layers}-layer model",
                self.layer_index
            )));
        }
        Ok(())
    }
}

/// Raw source states paired row by row with their teacher states.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDataset {
    raw: HiddenStateBatch,
    teacher: HiddenStateBatch,
    labels: Option<Vec<i64>>,
}

impl SourceDataset {
    pub fn raw(&self) -> &HiddenStateBatch {
        &self.raw
    }

    pub fn teacher(&self) -> &HiddenStateBatch {
        &self.teacher
    }

    /// Evaluation-only answers for the source rows.
    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.raw.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.raw.d()
    }
}

/// Unlabelled target states. There is deliberately no place for teacher
/// states or labels here.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDataset {
    raw: HiddenStateBatch,
}

impl TargetDataset {
    pub fn new(raw: HiddenStateBatch) -> Self {
        Self { raw }
    }

    pub fn raw(&self) -> &HiddenStateBatch {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.raw.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.raw.d()
    }
}

/// Pairs raw source states with their teacher states by row index.
pub fn pair_source(
    raw: HiddenStateBatch,
    teacher: HiddenStateBatch,
    labels: Option<Vec<i64>>,
) -> Result<SourceDataset> {
    if raw.n() != teacher.n() || raw.d() != teacher.d() {
        return Err(Error::Alignment(format!(
            "raw is {}x{}, teacher is {}x{} ({} vs {} rows)",
            raw.n(),
            raw.d(),
            teacher.n(),
            teacher.d(),
            raw.n(),
            teacher.n()
        )));
    }
    if raw.layer_index() != teacher.layer_index() {
        return Err(Error::Provenance(format!(
            "raw states come from layer {}, teacher states from layer {}",
            raw.layer_index(),
            teacher.layer_index()
        )));
    }
    if let Some(labels) = &labels {
        if labels.len() != raw.n() {
            return Err(Error::Alignment(format!(
                "{} labels for {} rows",
                labels.len(),
                raw.n()
            )));
        }
    }
    Ok(SourceDataset {
        raw,
        teacher,
        labels,
    })
}
