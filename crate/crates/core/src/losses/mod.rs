//! Training objectives.
//!
//! - [`reasoning_loss`]: mean squared distance between adapted source states
//!   and teacher states, averaged over every element of the batch.
//! - [`mmd2`]: biased empirical MMD² between adapted source and target states
//!   under a (multi-bandwidth) RBF kernel.
//! - [`total_loss`]: `reason + λ·mmd2`, with gradients for both state sets.

mod kernel;
mod mmd;

pub use kernel::{median_heuristic, rbf_kernel, Bandwidth, KernelSpec, DEFAULT_MEDIAN_SCALES};
pub use mmd::{mmd2, mmd2_value, mmd2_with, Estimator, MmdOutput};

use alloc::format;
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::sum::pairwise_sum;
use crate::{Error, Result};

/// Loss values of one evaluation of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reason: f64,
    pub mmd2: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(reason: f64, mmd2: f64, lambda: f64) -> Self {
        Self {
            reason,
            mmd2,
            total: reason + lambda * mmd2,
            lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.reason.is_finite() && self.mmd2.is_finite() && self.total.is_finite()
    }
}

/// Joint loss and its gradients with respect to the adapted states.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub grad_source: Matrix,
    pub grad_target: Matrix,
}

/// Mean over all `N·d` elements of `(z - h*)²`, and its gradient
/// `2(Z - H*)/(N·d)`.
pub fn reasoning_loss(zs: &Matrix, teacher: &Matrix) -> Result<(f64, Matrix)> {
    zs.check_same_shape(teacher, "reasoning_loss")?;
    let count = (zs.rows() * zs.cols()) as f64;
    if count == 0.0 {
        return Err(Error::InvalidArgument("reasoning loss of an empty batch".into()));
    }
    let diff = zs.sub(teacher)?;
    let squares: Vec<f64> = diff.as_slice().iter().map(|x| x * x).collect();
    let loss = pairwise_sum(&squares) / count;
    let grad = diff.map(|x| 2.0 * x / count);
    Ok((loss, grad))
}

/// `reason + λ·mmd2` with gradients. The gradient with respect to `Z_S`
/// collects both terms; the one with respect to `Z_T` only the MMD term.
pub fn total_loss(
    zs: &Matrix,
    teacher: &Matrix,
    zt: &Matrix,
    lambda: f64,
    kernel: &KernelSpec,
) -> Result<TotalLoss> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let (reason, g_reason) = reasoning_loss(zs, teacher)?;
    let m = mmd2(zs, zt, kernel)?;
    let grad_source = g_reason.add_scaled(&m.grad_source, lambda)?;
    let grad_target = m.grad_target.map(|g| lambda * g);
    Ok(TotalLoss {
        breakdown: LossBreakdown::new(reason, m.value, lambda),
        grad_source,
        grad_target,
    })
}
