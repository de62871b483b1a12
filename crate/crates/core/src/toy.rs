//! A synthetic frozen backbone for end-to-end runs without a language model.
//!
//! - Source hidden states are standard normal in `ℝ^d`.
//! - The "reasoning shift" is `h ↦ h + tanh(M·h)` with a fixed random `M`;
//!   it produces the teacher states.
//! - Target hidden states come from the same latent distribution pushed
//!   through a rotation `Q` and a translation `t` orthogonal to `u`.
//! - The readout is `sign(u·z)` for a fixed unit vector `u`.
//!
//! Labels of both domains are the readout applied after the reasoning shift
//! of the domain's own states, so an adapter that reproduces the shift on the
//! target fixes the zero-shot errors.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adapter::AdapterParams;
use crate::batch::{pair_source, Dtype, HiddenStateBatch, SourceDataset, TargetDataset};
use crate::diagnostics::Domain;
use crate::inference::Generator;
use crate::matrix::{dot, norm, Matrix};
use crate::{Error, Result};

/// Layer index written into toy batches.
pub const TOY_LAYER: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyWorldConfig {
    pub d: usize,
    pub seed: u64,
    /// Rotation applied in every adjacent-coordinate plane, in degrees.
    pub rotation_deg: f64,
    /// Length of the target translation.
    pub shift_norm: f64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            d: 16,
            seed: 0,
            rotation_deg: 10.0,
            shift_norm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    config: ToyWorldConfig,
    m: Matrix,
    q: Matrix,
    t: Vec<f64>,
    u: Vec<f64>,
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl ToyWorld {
    /// The default world (`d = 16`, 10° rotations, `‖t‖ = 2`) for `seed`.
    pub fn new(seed: u64) -> Self {
        Self::with_config(ToyWorldConfig {
            seed,
            ..Default::default()
        })
        .expect("default toy config is valid")
    }

    /// Same `M` and `u` as [`ToyWorld::new`], but `Q = I` and `t = 0`.
    pub fn no_shift(seed: u64) -> Self {
        Self::with_config(ToyWorldConfig {
            seed,
            rotation_deg: 0.0,
            shift_norm: 0.0,
            ..Default::default()
        })
        .expect("no-shift toy config is valid")
    }

    pub fn with_config(config: ToyWorldConfig) -> Result<Self> {
        let d = config.d;
        if d < 2 {
            return Err(Error::InvalidArgument(format!("toy world needs d ≥ 2, got {d}")));
        }
        if !(config.shift_norm >= 0.0 && config.shift_norm.is_finite() && config.rotation_deg.is_finite()) {
            return Err(Error::InvalidArgument("toy shift must be finite and non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / libm::sqrt(d as f64);
        let m = Matrix::from_fn(d, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });

        let mut u = normal_vec(d, &mut rng);
        let un = norm(&u);
        u.iter_mut().for_each(|x| *x /= un);

        // the translation is a nuisance: it lies in the readout's null space
        let mut t = normal_vec(d, &mut rng);
        let c = dot(&t, &u);
        for (x, y) in t.iter_mut().zip(&u) {
            *x -= c * y;
        }
        let tn = norm(&t);
        t.iter_mut().for_each(|x| *x *= config.shift_norm / tn);

        // Q = G(d-2, d-1) ⋯ G(1, 2) G(0, 1)
        let theta = config.rotation_deg.to_radians();
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let mut q = Matrix::identity(d);
        for i in 0..d - 1 {
            for col in 0..d {
                let a = q[(i, col)];
                let b = q[(i + 1, col)];
                q[(i, col)] = c * a - s * b;
                q[(i + 1, col)] = s * a + c * b;
            }
        }
        Ok(Self { config, m, q, t, u })
    }

    pub fn config(&self) -> &ToyWorldConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn reasoning_map(&self) -> &Matrix {
        &self.m
    }

    pub fn rotation(&self) -> &Matrix {
        &self.q
    }

    pub fn translation(&self) -> &[f64] {
        &self.t
    }

    pub fn readout(&self) -> &[f64] {
        &self.u
    }

    pub fn model_id(&self) -> alloc::string::String {
        format!("toy-d{}-seed{}", self.config.d, self.config.seed)
    }

    /// `h + tanh(M·h)`.
    pub fn reason(&self, h: &[f64]) -> Vec<f64> {
        (0..self.d())
            .map(|i| h[i] + libm::tanh(dot(self.m.row(i), h)))
            .collect()
    }

    /// `Q·h' + t`.
    pub fn shift(&self, latent: &[f64]) -> Vec<f64> {
        (0..self.d())
            .map(|i| dot(self.q.row(i), latent) + self.t[i])
            .collect()
    }

    /// The hidden label of a state: readout after the reasoning shift.
    pub fn label(&self, h: &[f64]) -> i64 {
        toy_generate(self, &self.reason(h))
    }
}

/// `sign(u·z)`, with `+1` on the boundary.
pub fn toy_generate(world: &ToyWorld, z: &[f64]) -> i64 {
    if dot(&world.u, z) >= 0.0 {
        1
    } else {
        -1
    }
}

/// Synthetic datasets and the labels withheld from training.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub source: SourceDataset,
    pub target: TargetDataset,
    pub target_labels: Vec<i64>,
}

/// [`synth_with_dtype`] with `f64` storage.
pub fn synth(world: &ToyWorld, n_source: usize, n_target: usize, seed: u64) -> Result<ToyData> {
    synth_with_dtype(world, n_source, n_target, seed, Dtype::F64)
}

/// Samples source and target states. Teacher states and labels are derived
/// from the stored (dtype-quantized) raw states, so files written at either
/// precision stay self-consistent.
pub fn synth_with_dtype(
    world: &ToyWorld,
    n_source: usize,
    n_target: usize,
    seed: u64,
    dtype: Dtype,
) -> Result<ToyData> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::InvalidArgument(format!(
            "toy synthesis needs ≥ 1 row per domain, got {n_source} and {n_target}"
        )));
    }
    let d = world.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = world.model_id();

    let hs = Matrix::from_fn(n_source, d, |_, _| StandardNormal.sample(&mut rng));
    let raw_s = HiddenStateBatch::new(hs, "source", TOY_LAYER, model.clone(), dtype)?;
    let mut teacher = Matrix::zeros(n_source, d);
    let mut source_labels = Vec::with_capacity(n_source);
    for i in 0..n_source {
        let h = raw_s.values().row(i);
        teacher.row_mut(i).copy_from_slice(&world.reason(h));
        source_labels.push(world.label(h));
    }
    let teacher = HiddenStateBatch::new(teacher, "source:teacher", TOY_LAYER, model.clone(), dtype)?;
    let source = pair_source(raw_s, teacher, Some(source_labels))?;

    let mut ht = Matrix::zeros(n_target, d);
    for i in 0..n_target {
        let latent = normal_vec(d, &mut rng);
        ht.row_mut(i).copy_from_slice(&world.shift(&latent));
    }
    let raw_t = HiddenStateBatch::new(ht, "target", TOY_LAYER, model, dtype)?;
    let target_labels = raw_t.values().row_iter().map(|h| world.label(h)).collect();

    Ok(ToyData {
        source,
        target: TargetDataset::new(raw_t),
        target_labels,
    })
}

/// Zero-shot and adapted accuracy on labelled target states.
pub fn evaluate(
    world: &ToyWorld,
    params: &AdapterParams,
    target: &TargetDataset,
    labels: &[i64],
    alpha: f64,
) -> Result<(f64, f64)> {
    if labels.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} target rows",
            labels.len(),
            target.len()
        )));
    }
    let h = target.raw().values();
    let z = params.steer(h, alpha)?;
    let n = labels.len() as f64;
    let mut zero_shot = 0usize;
    let mut adapted = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        zero_shot += (toy_generate(world, h.row(i)) == y) as usize;
        adapted += (toy_generate(world, z.row(i)) == y) as usize;
    }
    Ok((zero_shot as f64 / n, adapted as f64 / n))
}

/// A question for the toy backbone: a latent vector and the domain it was
/// asked in.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyInput {
    pub domain: Domain,
    pub latent: Vec<f64>,
}

impl Generator for ToyWorld {
    type Input = ToyInput;
    type Output = i64;

    fn dim(&self) -> usize {
        self.d()
    }

    fn extract(&self, input: &ToyInput) -> Result<Vec<f64>> {
        if input.latent.len() != self.d() {
            return Err(crate::shape_err(
                "toy extract",
                format!("{} values", self.d()),
                format!("{} values", input.latent.len()),
            ));
        }
        Ok(match input.domain {
            Domain::Source => input.latent.clone(),
            Domain::Target => self.shift(&input.latent),
        })
    }

    fn generate(&self, state: &[f64]) -> Result<i64> {
        Ok(toy_generate(self, state))
    }
}

/// `QᵀQ - I`, max abs entry.
pub fn orthogonality_error(q: &Matrix) -> f64 {
    let qtq = q.t_matmul(q).expect("square");
    qtq.max_abs_diff(&Matrix::identity(q.rows()))
}
