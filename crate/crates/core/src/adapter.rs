//! The residual adapter `A(h) = W2·tanh(W1·h + b1) + b2`.
//!
//! Steering adds the adapter output back onto the hidden state:
//! `z = h + alpha·A(h)`. The output layer starts at zero, so a fresh adapter
//! is the identity under steering while the first layer still carries a
//! usable gradient path.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::matrix::Matrix;
use crate::{shape_err, Error, Result};

/// Bottleneck width used when none is given: a quarter of the hidden width,
/// never below 4.
pub fn default_bottleneck(d: usize) -> usize {
    (d / 4).max(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// `r×d`
    pub w1: Matrix,
    /// `r`
    pub b1: Vec<f64>,
    /// `d×r`
    pub w2: Matrix,
    /// `d`
    pub b2: Vec<f64>,
}

/// Gradients with respect to [`AdapterParams`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 4] = ["W1", "b1", "W2", "b2"];

impl AdapterParams {
    /// Fresh parameters: `W1 ~ U(-1/√d, 1/√d)`, `b1 = 0`, `W2 = 0`, `b2 = 0`.
    pub fn init<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || r == 0 {
            return Err(Error::InvalidArgument(format!(
                "adapter needs d >= 1 and r >= 1, got d={d}, r={r}"
            )));
        }
        let bound = 1.0 / libm::sqrt(d as f64);
        let w1 = Matrix::from_fn(r, d, |_, _| rng.random_range(-bound..bound));
        Ok(Self {
            w1,
            b1: vec![0.0; r],
            w2: Matrix::zeros(d, r),
            b2: vec![0.0; d],
        })
    }

    /// All-zero parameters. Steering with them is the identity.
    pub fn zeros(d: usize, r: usize) -> Self {
        Self {
            w1: Matrix::zeros(r, d),
            b1: vec![0.0; r],
            w2: Matrix::zeros(d, r),
            b2: vec![0.0; d],
        }
    }

    pub fn from_parts(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        let (r, d) = w1.shape();
        if b1.len() != r || w2.shape() != (d, r) || b2.len() != d || r == 0 || d == 0 {
            return Err(shape_err(
                "AdapterParams::from_parts",
                format!("W1 {r}x{d}, b1 {r}, W2 {d}x{r}, b2 {d}"),
                format!(
                    "W1 {r}x{d}, b1 {}, W2 {}x{}, b2 {}",
                    b1.len(),
                    w2.rows(),
                    w2.cols(),
                    b2.len()
                ),
            ));
        }
        let p = Self { w1, b1, w2, b2 };
        for (name, t) in TENSOR_NAMES.iter().zip(p.tensors()) {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "adapter tensor {name} has a non-finite entry"
                )));
            }
        }
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.w1.cols()
    }

    pub fn r(&self) -> usize {
        self.w1.rows()
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.d() * self.r() + self.d() + self.r()
    }

    /// `[W1, b1, W2, b2]` as flat slices.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    fn check_input(&self, h: &Matrix, context: &'static str) -> Result<()> {
        if h.cols() != self.d() {
            return Err(shape_err(
                context,
                format!("{} columns", self.d()),
                format!("{} columns", h.cols()),
            ));
        }
        Ok(())
    }

    /// Bottleneck activations `tanh(H·W1ᵀ + b1)`, `N×r`.
    fn hidden(&self, h: &Matrix) -> Matrix {
        let mut pre = h.matmul_t(&self.w1).expect("checked by caller");
        pre.add_row_vector(&self.b1);
        pre.map(libm::tanh)
    }

    /// `A(H)`, one output row per input row.
    pub fn forward(&self, h: &Matrix) -> Result<Matrix> {
        self.check_input(h, "adapter forward")?;
        let act = self.hidden(h);
        let mut out = act.matmul_t(&self.w2)?;
        out.add_row_vector(&self.b2);
        Ok(out)
    }

    /// `H + alpha·A(H)`.
    pub fn steer(&self, h: &Matrix, alpha: f64) -> Result<Matrix> {
        if !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "steering strength must be finite, got {alpha}"
            )));
        }
        let mut z = self.forward(h)?;
        for (z, &x) in z.as_mut_slice().iter_mut().zip(h.as_slice()) {
            let step = alpha * *z;
            // adding an exact zero would turn -0.0 into +0.0
            *z = if step == 0.0 { x } else { x + step };
        }
        Ok(z)
    }

    /// Gradients of a loss with respect to the parameters, given the
    /// gradient `upstream = ∂L/∂A(H)`.
    pub fn backward(&self, h: &Matrix, upstream: &Matrix) -> Result<AdapterGrads> {
        self.check_input(h, "adapter backward")?;
        if upstream.shape() != (h.rows(), self.d()) {
            return Err(shape_err(
                "adapter backward upstream",
                format!("{}x{}", h.rows(), self.d()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let act = self.hidden(h);
        let w2 = upstream.t_matmul(&act)?;
        let b2 = upstream.column_sums();
        let mut g_pre = upstream.matmul(&self.w2)?;
        for (g, a) in g_pre.as_mut_slice().iter_mut().zip(act.as_slice()) {
            *g *= 1.0 - a * a;
        }
        let w1 = g_pre.t_matmul(h)?;
        let b1 = g_pre.column_sums();
        Ok(AdapterGrads { w1, b1, w2, b2 })
    }
}

impl AdapterGrads {
    pub fn zeros_like(p: &AdapterParams) -> Self {
        Self {
            w1: Matrix::zeros(p.r(), p.d()),
            b1: vec![0.0; p.r()],
            w2: Matrix::zeros(p.d(), p.r()),
            b2: vec![0.0; p.d()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn shape_matches(&self, p: &AdapterParams) -> bool {
        self.tensors()
            .iter()
            .zip(p.tensors())
            .all(|(g, t)| g.len() == t.len())
            && self.w1.shape() == p.w1.shape()
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &AdapterGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// `A(H)`; see [`AdapterParams::forward`].
pub fn adapter_forward(params: &AdapterParams, h: &Matrix) -> Result<Matrix> {
    params.forward(h)
}

/// `H + alpha·A(H)`; see [`AdapterParams::steer`].
pub fn steer(params: &AdapterParams, h: &Matrix, alpha: f64) -> Result<Matrix> {
    params.steer(h, alpha)
}

/// See [`AdapterParams::backward`].
pub fn adapter_backward(
    params: &AdapterParams,
    h: &Matrix,
    upstream: &Matrix,
) -> Result<AdapterGrads> {
    params.backward(h, upstream)
}
