use alloc::format;
use alloc::vec::Vec;

use super::kernel::{squared_distances, KernelSpec};
use crate::matrix::Matrix;
use crate::sum::pairwise_sum;
use crate::{shape_err, Error, Result};

/// Which empirical MMD² estimator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// V-statistic, diagonal terms included. Always ≥ 0 and the one used
    /// for training.
    #[default]
    Biased,
    /// U-statistic without diagonal terms. Needs at least 2 points per set.
    Unbiased,
}

/// MMD² together with its gradients with respect to both point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdOutput {
    pub value: f64,
    pub grad_source: Matrix,
    pub grad_target: Matrix,
}

fn check_sets(zs: &Matrix, zt: &Matrix, estimator: Estimator) -> Result<()> {
    if zs.cols() != zt.cols() {
        return Err(shape_err(
            "mmd2",
            format!("{} columns", zs.cols()),
            format!("{} columns", zt.cols()),
        ));
    }
    let min = match estimator {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    };
    if zs.rows() < min || zt.rows() < min {
        return Err(Error::InvalidArgument(format!(
            "MMD needs at least {min} point(s) per set, got {} and {}",
            zs.rows(),
            zt.rows()
        )));
    }
    Ok(())
}

fn resolve(zs: &Matrix, zt: &Matrix, kernel: &KernelSpec) -> Result<Vec<f64>> {
    let k = if kernel.is_resolved() {
        kernel.clone()
    } else {
        kernel.resolve(&zs.vstack(zt)?)?
    };
    Ok(k.sigmas().expect("resolved").to_vec())
}

/// Sum of `exp(-D/(2σ²))` over a block of squared distances. Values are
/// sorted before the tree sum, so the result only depends on the multiset of
/// entries: row shuffles and transposition leave it bit-identical.
fn kernel_sum(d2: &Matrix, sigma: f64, skip_diagonal: bool, buf: &mut Vec<f64>) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    buf.clear();
    for i in 0..d2.rows() {
        for (j, &v) in d2.row(i).iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            buf.push(libm::exp(-v * inv));
        }
    }
    buf.sort_unstable_by(f64::total_cmp);
    pairwise_sum(buf)
}

fn value_from_distances(
    dss: &Matrix,
    dtt: &Matrix,
    dst: &Matrix,
    sigmas: &[f64],
    estimator: Estimator,
) -> f64 {
    let n = dss.rows() as f64;
    let m = dtt.rows() as f64;
    let (skip, norm_s, norm_t) = match estimator {
        Estimator::Biased => (false, n * n, m * m),
        Estimator::Unbiased => (true, n * (n - 1.0), m * (m - 1.0)),
    };
    let mut buf = Vec::new();
    let mut total = 0.0;
    for &sigma in sigmas {
        let ss = kernel_sum(dss, sigma, skip, &mut buf);
        let tt = kernel_sum(dtt, sigma, skip, &mut buf);
        let st = kernel_sum(dst, sigma, false, &mut buf);
        total += ss / norm_s + tt / norm_t - 2.0 * st / (n * m);
    }
    total
}

/// MMD² value only.
pub fn mmd2_value(zs: &Matrix, zt: &Matrix, kernel: &KernelSpec, estimator: Estimator) -> Result<f64> {
    check_sets(zs, zt, estimator)?;
    let sigmas = resolve(zs, zt, kernel)?;
    let dss = squared_distances(zs, zs);
    let dtt = squared_distances(zt, zt);
    let dst = squared_distances(zs, zt);
    Ok(value_from_distances(&dss, &dtt, &dst, &sigmas, estimator))
}

/// Biased MMD² with analytic gradients.
///
/// With `k(x,y) = exp(-‖x-y‖²/(2σ²))`, `∂k/∂x = -k·(x-y)/σ²`, so
///
/// ```text
/// ∂/∂s_i = -(2/N²) Σ_b w(s_i,s_b)(s_i-s_b) + (2/NM) Σ_j w(s_i,t_j)(s_i-t_j)
/// ∂/∂t_j = -(2/M²) Σ_b w(t_j,t_b)(t_j-t_b) + (2/NM) Σ_i w(s_i,t_j)(t_j-s_i)
/// ```
///
/// where `w = Σ_σ k_σ/σ²`. A rule-based kernel is resolved on `Z_S ∪ Z_T`
/// first; gradients treat the resulting bandwidths as constants.
pub fn mmd2(zs: &Matrix, zt: &Matrix, kernel: &KernelSpec) -> Result<MmdOutput> {
    mmd2_with(zs, zt, kernel, Estimator::Biased)
}

pub fn mmd2_with(
    zs: &Matrix,
    zt: &Matrix,
    kernel: &KernelSpec,
    estimator: Estimator,
) -> Result<MmdOutput> {
    check_sets(zs, zt, estimator)?;
    let sigmas = resolve(zs, zt, kernel)?;
    let dss = squared_distances(zs, zs);
    let dtt = squared_distances(zt, zt);
    let dst = squared_distances(zs, zt);
    let value = value_from_distances(&dss, &dtt, &dst, &sigmas, estimator);

    let n = zs.rows() as f64;
    let m = zt.rows() as f64;
    let (norm_s, norm_t) = match estimator {
        Estimator::Biased => (n * n, m * m),
        Estimator::Unbiased => (n * (n - 1.0), m * (m - 1.0)),
    };
    let weights = |d2: &Matrix| {
        d2.map(|v| {
            sigmas
                .iter()
                .map(|&s| libm::exp(-v / (2.0 * s * s)) / (s * s))
                .sum::<f64>()
        })
    };
    let wss = weights(&dss);
    let wtt = weights(&dtt);
    let wst = weights(&dst);

    // Each gradient entry is a sorted tree sum over per-pair terms, like the
    // value. Identical source and target multisets therefore give gradients
    // that are exactly zero, and swapping the sets swaps them bit-for-bit.
    let grad = |own: &Matrix, w_own: &Matrix, own_norm: f64, other: &Matrix, w_cross: &Matrix, transposed: bool| {
        let mut g = Matrix::zeros(own.rows(), own.cols());
        let mut within = Vec::with_capacity(own.rows());
        let mut across = Vec::with_capacity(other.rows());
        for i in 0..own.rows() {
            let pi = own.row(i);
            for k in 0..own.cols() {
                within.clear();
                within.extend((0..own.rows()).map(|b| w_own[(i, b)] * (pi[k] - own[(b, k)])));
                across.clear();
                across.extend((0..other.rows()).map(|j| {
                    let w = if transposed { w_cross[(j, i)] } else { w_cross[(i, j)] };
                    w * (pi[k] - other[(j, k)])
                }));
                within.sort_unstable_by(f64::total_cmp);
                across.sort_unstable_by(f64::total_cmp);
                g[(i, k)] = -(2.0 / own_norm) * pairwise_sum(&within) + (2.0 / (n * m)) * pairwise_sum(&across);
            }
        }
        g
    };
    let grad_source = grad(zs, &wss, norm_s, zt, &wst, false);
    let grad_target = grad(zt, &wtt, norm_t, zs, &wst, true);

    Ok(MmdOutput {
        value,
        grad_source,
        grad_target,
    })
}
