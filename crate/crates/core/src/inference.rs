//! Adapted inference against a frozen backbone.
//!
//! The backbone is split at the steering layer: [`Generator::extract`] runs
//! the layers up to it and returns the hidden state, [`Generator::generate`]
//! runs the remaining layers from a (possibly steered) state. Both take
//! `&self`; a backbone is never modified by inference.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adapter::AdapterParams;
use crate::batch::HiddenStateBatch;
use crate::matrix::Matrix;
use crate::{shape_err, Result};

pub trait Generator {
    type Input: ?Sized;
    type Output;

    /// Width of the hidden state at the steering layer.
    fn dim(&self) -> usize;

    fn extract(&self, input: &Self::Input) -> Result<Vec<f64>>;

    fn generate(&self, state: &[f64]) -> Result<Self::Output>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeredResult<O> {
    pub raw_state: Vec<f64>,
    pub steered_state: Vec<f64>,
    pub output: O,
}

/// Extract, steer with `alpha`, generate.
pub fn adapted_infer<G: Generator + ?Sized>(
    backbone: &G,
    params: &AdapterParams,
    input: &G::Input,
    alpha: f64,
) -> Result<SteeredResult<G::Output>> {
    if params.d() != backbone.dim() {
        return Err(shape_err(
            "adapted_infer",
            format!("adapter for d={}", backbone.dim()),
            format!("adapter for d={}", params.d()),
        ));
    }
    let raw_state = backbone.extract(input)?;
    if raw_state.len() != params.d() {
        return Err(shape_err(
            "adapted_infer extract",
            format!("{} values", params.d()),
            format!("{} values", raw_state.len()),
        ));
    }
    let h = Matrix::from_vec(1, raw_state.len(), raw_state.clone())?;
    let steered_state = params.steer(&h, alpha)?.into_vec();
    let output = backbone.generate(&steered_state)?;
    Ok(SteeredResult {
        raw_state,
        steered_state,
        output,
    })
}

/// Steers every row of a stored batch. Provenance is kept and the domain tag
/// gets a `:steered` suffix.
pub fn batch_steer(
    params: &AdapterParams,
    batch: &HiddenStateBatch,
    alpha: f64,
) -> Result<HiddenStateBatch> {
    let z = params.steer(batch.values(), alpha)?;
    let mut tag = String::from(batch.domain_tag());
    tag.push_str(":steered");
    batch.with_values(z, tag)
}
