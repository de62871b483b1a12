//! Adapter training loop.
//!
//! Every step draws a source batch (raw + teacher rows) and an independent
//! target batch, adapts both with `z = h + A(h)`, evaluates
//! `reason + λ·mmd2` and applies one Adam update. Gradients reach the
//! adapter through both the source and the target states; teacher states are
//! constants.
//!
//! At the end of each epoch the objective is re-evaluated on a fixed
//! evaluation slice (the first `eval_rows` rows of each domain) with the
//! kernel frozen at training start. Those values form the history and drive
//! early stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::{default_bottleneck, AdapterGrads, AdapterParams};
use crate::batch::{SourceDataset, TargetDataset};
use crate::losses::{mmd2_value, reasoning_loss, total_loss, Estimator, KernelSpec, LossBreakdown};
use crate::matrix::Matrix;
use crate::optim::{adam_step, AdamState};
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub lambda: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    /// Bottleneck width; `None` picks [`default_bottleneck`].
    pub adapter_r: Option<usize>,
    /// Relative improvement of the evaluated total below which an epoch
    /// counts as stalled.
    pub convergence_eps: f64,
    /// Consecutive stalled epochs before stopping.
    pub patience: usize,
    /// Rows per domain used for the end-of-epoch evaluation and for
    /// resolving a median-rule kernel.
    pub eval_rows: usize,
    /// Kept for reference; the training loop does not use it.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_source: 32,
            batch_target: 32,
            lambda: 1.0,
            max_epochs: 50,
            seed: 0,
            kernel: KernelSpec::median_heuristic(),
            adapter_r: None,
            convergence_eps: 1e-6,
            patience: 5,
            eval_rows: 1024,
            eval_batch: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if self.batch_source == 0 || self.batch_target == 0 {
            return bad(format!(
                "batch sizes must be ≥ 1, got {} and {}",
                self.batch_source, self.batch_target
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be ≥ 1".into());
        }
        if self.adapter_r == Some(0) {
            return bad("adapter bottleneck must be ≥ 1".into());
        }
        if self.convergence_eps.is_nan() || self.convergence_eps < 0.0 {
            return bad(format!("convergence_eps must be ≥ 0, got {}", self.convergence_eps));
        }
        if self.patience == 0 {
            return bad("patience must be ≥ 1".into());
        }
        if self.eval_rows < 1 {
            return bad("eval_rows must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub reason: f64,
    pub mmd2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stop: StopReason,
    /// The kernel actually used, bandwidths resolved.
    pub kernel: KernelSpec,
    pub steps: u64,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
}

/// Loss values of a single optimisation step, handed to the observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("training diverged at epoch {epoch}, step {step}: {diagnostic}")]
    Diverged {
        epoch: usize,
        step: usize,
        diagnostic: String,
        /// Parameters before the failing step.
        last_good: alloc::boxed::Box<AdapterParams>,
    },
}

/// Row indices of one optimisation step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Produces the batches of successive epochs.
///
/// Source rows are reshuffled every epoch and cut into batches; a trailing
/// batch shorter than 2 rows is dropped. Target rows are consumed from a
/// shuffled permutation that is reshuffled whenever it runs out, regardless
/// of epoch boundaries.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n_source: usize,
    batch_source: usize,
    batch_target: usize,
    target_perm: Vec<usize>,
    target_pos: usize,
}

impl EpochSampler {
    pub fn new(
        n_source: usize,
        n_target: usize,
        batch_source: usize,
        batch_target: usize,
    ) -> Result<Self, Error> {
        if batch_source == 0 || batch_target == 0 {
            return Err(Error::InvalidArgument("batch sizes must be ≥ 1".into()));
        }
        if batch_source > n_source {
            return Err(Error::InvalidArgument(format!(
                "source batch size {batch_source} exceeds the {n_source} source rows"
            )));
        }
        if batch_target > n_target {
            return Err(Error::InvalidArgument(format!(
                "target batch size {batch_target} exceeds the {n_target} target rows"
            )));
        }
        Ok(Self {
            n_source,
            batch_source,
            batch_target,
            target_perm: (0..n_target).collect(),
            // forces a shuffle on first use
            target_pos: n_target,
        })
    }

    pub fn next_epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<BatchIndices> {
        let mut perm: Vec<usize> = (0..self.n_source).collect();
        perm.shuffle(rng);
        let mut batches = Vec::new();
        for chunk in perm.chunks(self.batch_source) {
            if chunk.len() < self.batch_source && chunk.len() < 2 {
                continue;
            }
            let target = (0..self.batch_target).map(|_| self.next_target(rng)).collect();
            batches.push(BatchIndices {
                source: chunk.to_vec(),
                target,
            });
        }
        batches
    }

    fn next_target<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.target_pos == self.target_perm.len() {
            self.target_perm.shuffle(rng);
            self.target_pos = 0;
        }
        let i = self.target_perm[self.target_pos];
        self.target_pos += 1;
        i
    }
}

/// One epoch's batches from a fresh sampler; see [`EpochSampler`].
pub fn sample_epoch<R: Rng + ?Sized>(
    n_source: usize,
    n_target: usize,
    batch_source: usize,
    batch_target: usize,
    rng: &mut R,
) -> Result<Vec<BatchIndices>, Error> {
    Ok(EpochSampler::new(n_source, n_target, batch_source, batch_target)?.next_epoch(rng))
}

/// Trains an adapter. See [`train_with_observer`].
pub fn train(
    source: &SourceDataset,
    target: &TargetDataset,
    config: &TrainConfig,
) -> Result<(AdapterParams, TrainHistory), TrainError> {
    train_with_observer(source, target, config, |_| {})
}

fn first_rows(m: &Matrix, n: usize) -> Matrix {
    let idx: Vec<usize> = (0..m.rows().min(n)).collect();
    m.select_rows(&idx)
}

struct EvalSlice {
    raw_s: Matrix,
    teacher: Matrix,
    raw_t: Matrix,
}

impl EvalSlice {
    fn loss(&self, params: &AdapterParams, lambda: f64, kernel: &KernelSpec) -> Result<LossBreakdown, Error> {
        let zs = params.steer(&self.raw_s, 1.0)?;
        let zt = params.steer(&self.raw_t, 1.0)?;
        let (reason, _) = reasoning_loss(&zs, &self.teacher)?;
        let mmd = mmd2_value(&zs, &zt, kernel, Estimator::Biased)?;
        Ok(LossBreakdown::new(reason, mmd, lambda))
    }
}

/// The training objective at `alpha = 1` for one source / target batch and
/// its gradient with respect to every adapter parameter. Gradients flow
/// through both the source and the target branch.
pub fn loss_and_grads(
    params: &AdapterParams,
    hs: &Matrix,
    teacher: &Matrix,
    ht: &Matrix,
    lambda: f64,
    kernel: &KernelSpec,
) -> Result<(LossBreakdown, AdapterGrads), Error> {
    let zs = params.steer(hs, 1.0)?;
    let zt = params.steer(ht, 1.0)?;
    let loss = total_loss(&zs, teacher, &zt, lambda, kernel)?;
    let mut grads = params.backward(hs, &loss.grad_source)?;
    grads.accumulate(&params.backward(ht, &loss.grad_target)?);
    Ok((loss.breakdown, grads))
}

/// Trains an adapter and reports every optimisation step to `observer`.
///
/// The run is fully determined by `config.seed` and the input data.
pub fn train_with_observer(
    source: &SourceDataset,
    target: &TargetDataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&StepRecord),
) -> Result<(AdapterParams, TrainHistory), TrainError> {
    config.validate()?;
    let d = source.d();
    if target.d() != d {
        return Err(Error::InvalidArgument(format!(
            "source states have d={d}, target states have d={}",
            target.d()
        ))
        .into());
    }
    let (ls, lt) = (source.raw().layer_index(), target.raw().layer_index());
    if ls != lt {
        return Err(Error::Provenance(format!(
            "source states come from layer {ls}, target states from layer {lt}"
        ))
        .into());
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument("training needs non-empty datasets".into()).into());
    }

    let hs_all = source.raw().values();
    let teacher_all = source.teacher().values();
    let ht_all = target.raw().values();

    let eval = EvalSlice {
        raw_s: first_rows(hs_all, config.eval_rows),
        teacher: first_rows(teacher_all, config.eval_rows),
        raw_t: first_rows(ht_all, config.eval_rows),
    };
    let kernel = config.kernel.resolve(&eval.raw_s.vstack(&eval.raw_t)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = config.adapter_r.unwrap_or_else(|| default_bottleneck(d));
    let mut params = AdapterParams::init(d, r, &mut rng)?;
    let mut adam = AdamState::new(&params);
    let mut sampler = EpochSampler::new(
        source.len(),
        target.len(),
        config.batch_source,
        config.batch_target,
    )?;

    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.max_epochs);
    let mut stop = StopReason::MaxEpochs;
    let mut stalled = 0usize;
    let mut steps = 0u64;

    for epoch in 1..=config.max_epochs {
        for (step, batch) in sampler.next_epoch(&mut rng).iter().enumerate() {
            let hs = hs_all.select_rows(&batch.source);
            let teacher = teacher_all.select_rows(&batch.source);
            let ht = ht_all.select_rows(&batch.target);

            let (loss, grads) = loss_and_grads(&params, &hs, &teacher, &ht, config.lambda, &kernel)?;
            let diverged = |diagnostic: String, params: &AdapterParams| TrainError::Diverged {
                epoch,
                step,
                diagnostic,
                last_good: alloc::boxed::Box::new(params.clone()),
            };
            if !loss.is_finite() {
                return Err(diverged(
                    format!(
                        "non-finite loss (reason={}, mmd2={})",
                        loss.reason, loss.mmd2
                    ),
                    &params,
                ));
            }
            observer(&StepRecord {
                epoch,
                step,
                batch_source: batch.source.len(),
                batch_target: batch.target.len(),
                loss,
            });

            let before = params.clone();
            match adam_step(&mut params, &grads, &mut adam, config.lr) {
                Ok(()) => {}
                Err(e @ Error::NonFiniteGradient { .. }) => {
                    return Err(diverged(format!("{e}"), &before));
                }
                Err(e) => return Err(e.into()),
            }
            steps += 1;
        }

        let eval_loss = eval.loss(&params, config.lambda, &kernel)?;
        if !eval_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                step: usize::MAX,
                diagnostic: format!("non-finite evaluation loss after epoch {epoch}"),
                last_good: alloc::boxed::Box::new(params),
            });
        }
        if let Some(prev) = records.last() {
            let improvement = if prev.total != 0.0 {
                (prev.total - eval_loss.total) / libm::fabs(prev.total)
            } else {
                0.0
            };
            if improvement < config.convergence_eps {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        records.push(EpochRecord {
            epoch,
            reason: eval_loss.reason,
            mmd2: eval_loss.mmd2,
            total: eval_loss.total,
        });
        if stalled >= config.patience {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok((
        params,
        TrainHistory {
            records,
            stop,
            kernel,
            steps,
            wall_time_secs: None,
        },
    ))
}
