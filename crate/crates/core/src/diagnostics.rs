//! Alignment diagnostics between two domains.
//!
//! Three metrics over a point set whose rows are labelled source or target:
//!
//! - silhouette with the domains as clusters (lower = better mixed),
//! - k-NN mixing: the percentage of nearest neighbours that belong to the
//!   other domain (higher = better mixed),
//! - biased MMD² between the two domains (lower = closer).
//!
//! They can be computed in the raw space or on a deterministic 2-D PCA
//! projection. Distances are Euclidean; all sums run in index order so the
//! results are reproducible bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::losses::{mmd2_value, Estimator, KernelSpec};
use crate::matrix::{dot, euclidean, norm, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Domain {
    Source = 0,
    Target = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    points: Matrix,
    labels: Vec<Domain>,
}

impl LabeledPointSet {
    pub fn new(points: Matrix, labels: Vec<Domain>) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(crate::shape_err(
                "LabeledPointSet",
                format!("{} labels", points.rows()),
                format!("{} labels", labels.len()),
            ));
        }
        let set = Self { points, labels };
        let (s, t) = set.counts();
        if s == 0 || t == 0 {
            return Err(Error::InvalidArgument(format!(
                "both domains must be present, got {s} source and {t} target points"
            )));
        }
        Ok(set)
    }

    /// Source rows first, then target rows.
    pub fn from_domains(source: &Matrix, target: &Matrix) -> Result<Self> {
        let points = source.vstack(target)?;
        let mut labels = vec![Domain::Source; source.rows()];
        labels.resize(source.rows() + target.rows(), Domain::Target);
        Self::new(points, labels)
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn labels(&self) -> &[Domain] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn counts(&self) -> (usize, usize) {
        let s = self.labels.iter().filter(|&&l| l == Domain::Source).count();
        (s, self.labels.len() - s)
    }

    fn split(&self) -> (Matrix, Matrix) {
        let (mut s, mut t) = (Vec::new(), Vec::new());
        for (i, l) in self.labels.iter().enumerate() {
            match l {
                Domain::Source => s.push(i),
                Domain::Target => t.push(i),
            }
        }
        (self.points.select_rows(&s), self.points.select_rows(&t))
    }

    fn with_points(&self, points: Matrix) -> Self {
        Self {
            points,
            labels: self.labels.clone(),
        }
    }
}

/// Mean silhouette using the two domains as clusters.
pub fn silhouette(set: &LabeledPointSet) -> Result<f64> {
    let (s, t) = set.counts();
    if s < 2 || t < 2 {
        return Err(Error::InvalidArgument(format!(
            "silhouette needs at least 2 points per domain, got {s} and {t}"
        )));
    }
    let p = set.len();
    let pts = &set.points;
    let mut total = 0.0;
    for i in 0..p {
        let (mut same, mut n_same, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..p {
            if j == i {
                continue;
            }
            let d = euclidean(pts.row(i), pts.row(j));
            if set.labels[j] == set.labels[i] {
                same += d;
                n_same += 1;
            } else {
                other += d;
                n_other += 1;
            }
        }
        let a = same / n_same as f64;
        let b = other / n_other as f64;
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / p as f64)
}

/// Percentage of k-nearest neighbours carrying the other domain label.
/// A point is never its own neighbour; equal distances go to the lower
/// index.
pub fn knn_mixing(set: &LabeledPointSet, k: usize) -> Result<f64> {
    let p = set.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    if p <= k {
        return Err(Error::InvalidArgument(format!(
            "k-NN mixing with k={k} needs more than {k} points, got {p}"
        )));
    }
    let pts = &set.points;
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    let mut opposite = 0usize;
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(p - 1);
    for i in 0..p {
        cand.clear();
        cand.extend(
            (0..p)
                .filter(|&j| j != i)
                .map(|j| (euclidean(pts.row(i), pts.row(j)), j)),
        );
        cand.select_nth_unstable_by(k - 1, by_distance);
        opposite += cand[..k]
            .iter()
            .filter(|(_, j)| set.labels[*j] != set.labels[i])
            .count();
    }
    Ok(100.0 * opposite as f64 / (p * k) as f64)
}

pub const PCA_MAX_ITER: usize = 1000;
pub const PCA_TOL: f64 = 1e-10;

/// Top-2 principal axes found by power iteration with deflation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub variances: [f64; 2],
    pub total_variance: f64,
}

impl Pca2d {
    pub fn fit(points: &Matrix) -> Result<Self> {
        let (p, q) = points.shape();
        if p < 2 || q < 2 {
            return Err(Error::InvalidArgument(format!(
                "PCA needs at least 2 points in at least 2 dimensions, got {p}x{q}"
            )));
        }
        let mean = points.column_means();
        let mut centered = points.clone();
        let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
        centered.add_row_vector(&neg);
        let denom = (p - 1) as f64;
        let mut cov = centered.t_matmul(&centered)?.map(|x| x / denom);
        let total_variance: f64 = (0..q).map(|i| cov[(i, i)]).sum();
        if total_variance.is_nan() || total_variance <= 0.0 {
            return Err(Error::InvalidArgument(
                "PCA of data with zero variance (rank 0)".into(),
            ));
        }

        let mut components: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut variances = [0.0; 2];
        for c in 0..2 {
            let v = power_iteration(&cov, &components[..c]);
            let lambda = dot(&v, &cov.matmul(&Matrix::from_vec(q, 1, v.clone())?)?.into_vec());
            // deflate
            for i in 0..q {
                for j in 0..q {
                    cov[(i, j)] -= lambda * v[i] * v[j];
                }
            }
            variances[c] = lambda.max(0.0);
            components[c] = v;
        }
        Ok(Self {
            mean,
            components,
            variances,
            total_variance,
        })
    }

    pub fn explained_ratio(&self) -> [f64; 2] {
        [
            self.variances[0] / self.total_variance,
            self.variances[1] / self.total_variance,
        ]
    }

    pub fn transform(&self, points: &Matrix) -> Result<Matrix> {
        if points.cols() != self.mean.len() {
            return Err(crate::shape_err(
                "Pca2d::transform",
                format!("{} columns", self.mean.len()),
                format!("{} columns", points.cols()),
            ));
        }
        Ok(Matrix::from_fn(points.rows(), 2, |i, c| {
            points
                .row(i)
                .iter()
                .zip(&self.mean)
                .zip(&self.components[c])
                .map(|((x, m), w)| (x - m) * w)
                .sum()
        }))
    }

    /// Maps projected coordinates back into the original space.
    pub fn reconstruct(&self, projected: &Matrix) -> Matrix {
        Matrix::from_fn(projected.rows(), self.mean.len(), |i, j| {
            self.mean[j]
                + projected[(i, 0)] * self.components[0][j]
                + projected[(i, 1)] * self.components[1][j]
        })
    }
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let c = dot(v, u);
        for (x, y) in v.iter_mut().zip(u) {
            *x -= c * y;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(libm::fabs(*x)));
    if let Some(first) = v.iter().find(|x| libm::fabs(**x) > 1e-12 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn power_iteration(cov: &Matrix, previous: &[Vec<f64>]) -> Vec<f64> {
    let q = cov.rows();
    // fixed, non-symmetric start
    let mut v: Vec<f64> = (0..q).map(|j| 1.0 + j as f64 / q as f64).collect();
    orthogonalize(&mut v, previous);
    normalize(&mut v);
    for _ in 0..PCA_MAX_ITER {
        let mut w: Vec<f64> = (0..q).map(|i| dot(cov.row(i), &v)).collect();
        orthogonalize(&mut w, previous);
        if normalize(&mut w) <= f64::EPSILON * cov.as_slice().iter().fold(0.0, |m: f64, x| m.max(libm::fabs(*x))) {
            // no variance left in the remaining subspace
            return fallback_axis(q, previous);
        }
        fix_sign(&mut w);
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max);
        v = w;
        if delta < PCA_TOL {
            break;
        }
    }
    fix_sign(&mut v);
    v
}

fn fallback_axis(q: usize, previous: &[Vec<f64>]) -> Vec<f64> {
    let mut best = Vec::new();
    let mut best_norm = -1.0;
    for j in 0..q {
        let mut e = vec![0.0; q];
        e[j] = 1.0;
        orthogonalize(&mut e, previous);
        let n = norm(&e);
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = e;
        }
    }
    normalize(&mut best);
    fix_sign(&mut best);
    best
}

/// Projection onto the top two principal components.
pub fn pca2d(points: &Matrix) -> Result<Matrix> {
    Pca2d::fit(points)?.transform(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricSpace {
    #[default]
    Raw,
    Pca2d,
}

impl MetricSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricSpace::Raw => "raw",
            MetricSpace::Pca2d => "pca2d",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub silhouette: f64,
    pub mixing_pct: f64,
    pub mmd2: f64,
    pub k: usize,
    /// Bandwidths actually used.
    pub kernel: KernelSpec,
    pub space: MetricSpace,
}

impl AlignmentReport {
    /// Better or equal on every metric, strictly better on all three.
    pub fn dominates(&self, other: &AlignmentReport) -> bool {
        self.silhouette < other.silhouette
            && self.mixing_pct > other.mixing_pct
            && self.mmd2 < other.mmd2
    }
}

fn in_space(set: &LabeledPointSet, space: MetricSpace) -> Result<LabeledPointSet> {
    Ok(match space {
        MetricSpace::Raw => set.clone(),
        MetricSpace::Pca2d => set.with_points(pca2d(&set.points)?),
    })
}

/// All three metrics for a single point set with an already chosen kernel.
pub fn assess(
    set: &LabeledPointSet,
    k: usize,
    kernel: &KernelSpec,
    space: MetricSpace,
) -> Result<AlignmentReport> {
    let set = in_space(set, space)?;
    let kernel = kernel.resolve(set.points())?;
    let (s, t) = set.split();
    Ok(AlignmentReport {
        silhouette: silhouette(&set)?,
        mixing_pct: knn_mixing(&set, k)?,
        mmd2: mmd2_value(&s, &t, &kernel, Estimator::Biased)?,
        k,
        kernel,
        space,
    })
}

/// Before / after reports. A median-rule kernel is resolved once on the
/// `before` set and reused for `after`, so the two MMD values share
/// bandwidths.
pub fn report(
    before: &LabeledPointSet,
    after: &LabeledPointSet,
    k: usize,
    kernel: &KernelSpec,
    space: MetricSpace,
) -> Result<(AlignmentReport, AlignmentReport)> {
    let before_r = assess(before, k, kernel, space)?;
    let after_r = assess(after, k, &before_r.kernel, space)?;
    Ok((before_r, after_r))
}
