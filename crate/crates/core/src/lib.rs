//! Latent-space domain adaptation for frozen models.
//!
//! A small residual adapter is trained on hidden states taken from one layer
//! of a frozen backbone. Two objectives drive it: a distillation loss that
//! pulls adapted source states toward teacher states obtained with
//! chain-of-thought context, and a kernel MMD loss that pulls the adapted
//! source and target distributions together. At inference the trained adapter
//! steers target hidden states before they are handed back to the rest of the
//! backbone.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line front-end, and anything else that touches the operating system live in
//! the companion `coda` crate.
//!
//! Module map:
//!
//! - [`batch`]: hidden-state batches and the paired source / target datasets
//! - [`adapter`]: the residual adapter, its forward and analytic backward pass
//! - [`losses`]: distillation loss, RBF kernels, MMD and the joint objective
//! - [`optim`]: bias-corrected Adam
//! - [`trainer`]: mini-batch sampling and the training loop
//! - [`inference`]: the generator seam and adapted inference
//! - [`diagnostics`]: silhouette, k-NN mixing, MMD and a PCA projection
//! - [`toy`]: a synthetic frozen backbone for end-to-end checks

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adapter;
pub mod batch;
pub mod diagnostics;
pub mod inference;
pub mod losses;
pub mod matrix;
pub mod optim;
pub mod toy;
pub mod trainer;

mod sum;

pub use adapter::{AdapterGrads, AdapterParams};
pub use batch::{pair_source, Dtype, HiddenStateBatch, SourceDataset, TargetDataset};
pub use diagnostics::{AlignmentReport, LabeledPointSet, MetricSpace};
pub use inference::{adapted_infer, batch_steer, Generator, SteeredResult};
pub use losses::{KernelSpec, LossBreakdown};
pub use matrix::Matrix;
pub use optim::AdamState;
pub use trainer::{train, TrainConfig, TrainHistory};
pub use toy::ToyWorld;

use alloc::string::String;

/// Errors shared by every module of the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: &'static str },
    #[error("source alignment: raw and teacher differ ({0})")]
    Alignment(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        context,
        expected: expected.into(),
        got: got.into(),
    }
}
