//! MMD against a double-loop reference, plus estimator properties.

use coda_core::losses::{mmd2, mmd2_value, Estimator, KernelSpec};
use coda_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn k(x: &[f64], y: &[f64], sigmas: &[f64]) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    sigmas.iter().map(|s| (-sq / (2.0 * s * s)).exp()).sum()
}

/// Direct three-term evaluation; `unbiased` drops the diagonal terms.
fn naive(s: &Matrix, t: &Matrix, sigmas: &[f64], unbiased: bool) -> f64 {
    let (n, m) = (s.rows(), t.rows());
    let mut ss = 0.0;
    for i in 0..n {
        for j in 0..n {
            if !(unbiased && i == j) {
                ss += k(s.row(i), s.row(j), sigmas);
            }
        }
    }
    let mut tt = 0.0;
    for i in 0..m {
        for j in 0..m {
            if !(unbiased && i == j) {
                tt += k(t.row(i), t.row(j), sigmas);
            }
        }
    }
    let mut st = 0.0;
    for i in 0..n {
        for j in 0..m {
            st += k(s.row(i), t.row(j), sigmas);
        }
    }
    let (nn, mm) = if unbiased {
        ((n * (n - 1)) as f64, (m * (m - 1)) as f64)
    } else {
        ((n * n) as f64, (m * m) as f64)
    };
    ss / nn + tt / mm - 2.0 * st / (n * m) as f64
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

#[test]
fn matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let d = rng.random_range(1..=5);
        let s = random(rng.random_range(2..=20), d, &mut rng);
        let t = random(rng.random_range(2..=20), d, &mut rng);
        let sigmas: Vec<f64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0.3..3.0)).collect();
        let kernel = KernelSpec::rbf(sigmas.clone()).unwrap();
        for (est, unbiased) in [(Estimator::Biased, false), (Estimator::Unbiased, true)] {
            let got = mmd2_value(&s, &t, &kernel, est).unwrap();
            let want = naive(&s, &t, &sigmas, unbiased);
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
        let v = mmd2_value(&s, &t, &kernel, Estimator::Biased).unwrap();
        assert_eq!(v, mmd2_value(&t, &s, &kernel, Estimator::Biased).unwrap());
        assert!(v >= -1e-12);
    }
}

#[test]
fn spot_values() {
    let a = Matrix::from_rows(&[[0.0]]).unwrap();
    let b = Matrix::from_rows(&[[2.0]]).unwrap();
    let v = mmd2(&a, &b, &KernelSpec::rbf(vec![1.0]).unwrap()).unwrap().value;
    assert!((v - (2.0 - 2.0 * (-2.0f64).exp())).abs() < 1e-15);
    assert!((v - 1.729329).abs() < 1e-6);

    let s = Matrix::from_rows(&[[0.5, 1.0], [-1.0, 2.0], [3.0, 0.0]]).unwrap();
    let out = mmd2(&s, &s, &KernelSpec::rbf(vec![0.7, 1.4]).unwrap()).unwrap();
    assert!(out.value.abs() < 1e-12);
    assert!(out.grad_source.as_slice().iter().all(|g| g.abs() < 1e-12));
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[test]
fn translation_increases_mmd() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for sigma in [0.5, 1.0, 2.0] {
        let kernel = KernelSpec::rbf(vec![sigma]).unwrap();
        for _ in 0..5 {
            let d = rng.random_range(1..=6);
            let s = gaussian(60, d, &mut rng);
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|x| *x /= len);
            let mut prev = mmd2_value(&s, &s, &kernel, Estimator::Biased).unwrap();
            for step in 1..=30 {
                let c = 3.0 * sigma * step as f64 / 30.0;
                let t = Matrix::from_fn(60, d, |i, j| s[(i, j)] + c * dir[j]);
                let v = mmd2_value(&s, &t, &kernel, Estimator::Biased).unwrap();
                assert!(v > prev, "sigma {sigma}, shift {c}: {v} ≤ {prev}");
                prev = v;
            }
        }
    }
}

#[test]
fn median_kernel_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let s = gaussian(30, 4, &mut rng);
    let t = gaussian(25, 4, &mut rng);
    let kernel = KernelSpec::median_heuristic();
    let a = mmd2(&s, &t, &kernel).unwrap();
    let b = mmd2(&t, &s, &kernel).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.grad_source, b.grad_target);
    assert_eq!(a.grad_target, b.grad_source);
}

fn sets() -> impl Strategy<Value = (Matrix, Matrix, Vec<usize>, Vec<f64>)> {
    (1usize..=5, 1usize..=12, 1usize..=12).prop_flat_map(|(d, n, m)| {
        (
            prop::collection::vec(-5.0f64..5.0, n * d),
            prop::collection::vec(-5.0f64..5.0, m * d),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(0.1f64..5.0, 1..=3),
        )
            .prop_map(move |(a, b, perm, sigmas)| {
                (
                    Matrix::from_vec(n, d, a).unwrap(),
                    Matrix::from_vec(m, d, b).unwrap(),
                    perm,
                    sigmas,
                )
            })
    })
}

proptest! {
    #[test]
    fn symmetric_permutation_invariant_nonnegative((s, t, perm, sigmas) in sets()) {
        let kernel = KernelSpec::rbf(sigmas).unwrap();
        let v = mmd2_value(&s, &t, &kernel, Estimator::Biased).unwrap();
        prop_assert!(v >= -1e-12);
        prop_assert_eq!(v, mmd2_value(&t, &s, &kernel, Estimator::Biased).unwrap());
        let shuffled = s.select_rows(&perm);
        let w = mmd2_value(&shuffled, &t, &kernel, Estimator::Biased).unwrap();
        prop_assert!((v - w).abs() <= 1e-12, "{} vs {}", v, w);
    }
}
