use alloc::format;
use alloc::vec::Vec;

use crate::matrix::{euclidean, Matrix};
use crate::{Error, Result};

/// Multipliers applied to the median distance when no bandwidths are given.
pub const DEFAULT_MEDIAN_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    /// Explicit bandwidths `σ_1..σ_K`.
    Fixed(Vec<f64>),
    /// `σ_k = scale_k · median pairwise distance` of the points the kernel
    /// is resolved against.
    Median { scales: Vec<f64> },
}

/// An RBF kernel, possibly a sum over several bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::median_heuristic()
    }
}

impl KernelSpec {
    pub fn rbf(sigmas: Vec<f64>) -> Result<Self> {
        check_positive(&sigmas, "bandwidth")?;
        Ok(Self {
            bandwidth: Bandwidth::Fixed(sigmas),
        })
    }

    /// `{σ/2, σ, 2σ}` around the median distance.
    pub fn median_heuristic() -> Self {
        Self {
            bandwidth: Bandwidth::Median {
                scales: DEFAULT_MEDIAN_SCALES.to_vec(),
            },
        }
    }

    pub fn median_scaled(scales: Vec<f64>) -> Result<Self> {
        check_positive(&scales, "median scale")?;
        Ok(Self {
            bandwidth: Bandwidth::Median { scales },
        })
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.bandwidth
    }

    /// The fixed bandwidths, if this kernel is already resolved.
    pub fn sigmas(&self) -> Option<&[f64]> {
        match &self.bandwidth {
            Bandwidth::Fixed(s) => Some(s),
            Bandwidth::Median { .. } => None,
        }
    }

    pub fn is_resolved(&self) -> bool {
        self.sigmas().is_some()
    }

    /// Turns a median rule into fixed bandwidths measured on `points`.
    /// Fixed kernels are returned unchanged.
    pub fn resolve(&self, points: &Matrix) -> Result<KernelSpec> {
        match &self.bandwidth {
            Bandwidth::Fixed(_) => Ok(self.clone()),
            Bandwidth::Median { scales } => {
                let sigma = median_heuristic(points)?;
                KernelSpec::rbf(scales.iter().map(|s| s * sigma).collect())
            }
        }
    }
}

fn check_positive(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(format!("at least one {what} is required")));
    }
    if let Some(x) = xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be positive and finite, got {x}"
        )));
    }
    Ok(())
}

/// `exp(-‖x-y‖² / (2σ²))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "RBF bandwidth must be positive, got {sigma}"
        )));
    }
    if x.len() != y.len() {
        return Err(crate::shape_err(
            "rbf_kernel",
            format!("{} dims", x.len()),
            format!("{} dims", y.len()),
        ));
    }
    let d2 = crate::matrix::squared_distance(x, y);
    Ok(libm::exp(-d2 / (2.0 * sigma * sigma)))
}

/// Median of all non-zero pairwise Euclidean distances; 1 if every pair
/// coincides. The median of an even count is the mean of the middle two.
pub fn median_heuristic(points: &Matrix) -> Result<f64> {
    let p = points.rows();
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 points, got {p}"
        )));
    }
    let mut dists = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            let d = euclidean(points.row(i), points.row(j));
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Ok(1.0);
    }
    dists.sort_unstable_by(f64::total_cmp);
    let n = dists.len();
    let m = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    Ok(m)
}

/// Kernel values are built from squared distances, shared by all bandwidths.
pub(crate) fn squared_distances(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = crate::matrix::squared_distance(ai, b.row(j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 1.0);
        let v = rbf_kernel(&[0.0], &[2.0], 1.0).unwrap();
        assert!((v - libm::exp(-2.0)).abs() < 1e-16);
        assert!((v - 0.135335).abs() < 1e-6);
        assert!(rbf_kernel(&[0.0], &[1.0], 0.0).is_err());
        assert!(rbf_kernel(&[0.0], &[1.0], -1.0).is_err());
        assert!(rbf_kernel(&[0.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn rbf_decays_with_distance() {
        let mut prev = 1.0;
        for k in 1..60 {
            let v = rbf_kernel(&[0.0, 0.0], &[k as f64 * 0.5, 0.0], 1.3).unwrap();
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn median_examples() {
        let pts = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        assert_eq!(median_heuristic(&pts).unwrap(), 2.0);
        let same = Matrix::from_rows(&[[4.0, 1.0], [4.0, 1.0], [4.0, 1.0]]).unwrap();
        assert_eq!(median_heuristic(&same).unwrap(), 1.0);
        let two = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(median_heuristic(&two).unwrap(), 5.0);
        assert!(median_heuristic(&Matrix::from_rows(&[[1.0]]).unwrap()).is_err());
    }

    #[test]
    fn median_skips_zero_pairs() {
        // distances: 0 (dup), 2, 2 -> non-zero {2, 2}
        let pts = Matrix::from_rows(&[[0.0], [0.0], [2.0]]).unwrap();
        assert_eq!(median_heuristic(&pts).unwrap(), 2.0);
    }

    #[test]
    fn resolve_scales_median() {
        let pts = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let k = KernelSpec::median_heuristic().resolve(&pts).unwrap();
        assert_eq!(k.sigmas().unwrap(), &[1.0, 2.0, 4.0]);
        let fixed = KernelSpec::rbf(alloc::vec![0.7]).unwrap();
        assert_eq!(fixed.resolve(&pts).unwrap(), fixed);
        assert!(KernelSpec::rbf(alloc::vec![]).is_err());
        assert!(KernelSpec::rbf(alloc::vec![1.0, 0.0]).is_err());
    }
}
