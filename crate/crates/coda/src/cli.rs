//! The `coda` command line.
//!
//! Exit codes: 0 success, 2 bad input or arguments, 3 numerical failure.
//! Diagnostics go to standard error prefixed with `error:`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coda_core::batch::{pair_source, Dtype, HiddenStateBatch, TargetDataset};
use coda_core::diagnostics::{assess, LabeledPointSet, MetricSpace};
use coda_core::toy::{synth_with_dtype, ToyWorld, ToyWorldConfig};
use coda_core::trainer::{train, TrainConfig, TrainError};
use coda_core::{batch_steer, AdapterParams, KernelSpec};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::hsb::{self, HsbError};
use crate::text;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Default inference-time steering strength stored in new checkpoints.
pub const DEFAULT_ALPHA: f64 = 1.5;

#[derive(Debug, Parser)]
#[command(name = "coda", version, about = "Latent domain adaptation with a residual adapter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic toy dataset.
    Synth(SynthArgs),
    /// Train an adapter on source/teacher/target hidden states.
    Train(TrainArgs),
    /// Apply a trained adapter to a hidden-state file.
    Steer(SteerArgs),
    /// Alignment metrics between two hidden-state files.
    Diagnose(DiagnoseArgs),
    /// Print the header of every record in an HSB file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Raw,
    Pca2d,
}

impl From<SpaceArg> for MetricSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Raw => MetricSpace::Raw,
            SpaceArg::Pca2d => MetricSpace::Pca2d,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Seed of the toy world (M, Q, t, u).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for sampling the states.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 512)]
    pub n_source: usize,
    #[arg(long, default_value_t = 512)]
    pub n_target: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
    /// Identical source and target distributions (Q = I, t = 0).
    #[arg(long)]
    pub no_shift: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub source_raw: PathBuf,
    pub source_teacher: PathBuf,
    pub target_raw: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// History path; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Steering strength stored in the checkpoint for inference.
    #[arg(long, default_value_t = DEFAULT_ALPHA, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_source: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_target: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bottleneck width; defaults to max(d/4, 4).
    #[arg(long)]
    pub adapter_r: Option<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    pub convergence_eps: f64,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Comma-separated RBF bandwidths; empty means the median heuristic.
    #[arg(long, allow_hyphen_values = true)]
    pub kernel_sigmas: Option<String>,
    /// Bandwidths {0.5, 1, 2} × median pairwise distance (the default).
    #[arg(long, conflicts_with = "kernel_sigmas")]
    pub median_heuristic: bool,
}

impl KernelArgs {
    pub fn spec(&self) -> Result<KernelSpec, CliError> {
        match self.kernel_sigmas.as_deref().map(str::trim) {
            None | Some("") => Ok(KernelSpec::median_heuristic()),
            Some(list) => {
                let sigmas = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| CliError::input(format!("--kernel-sigmas: {s:?} is not a number")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                KernelSpec::rbf(sigmas).map_err(|e| CliError::input(format!("--kernel-sigmas: {e}")))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub adapter: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the alpha stored in the checkpoint.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// States of the first domain.
    pub a: PathBuf,
    /// States of the second domain.
    pub b: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = SpaceArg::Raw)]
    pub space: SpaceArg,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<coda_core::Error> for CliError {
    fn from(e: coda_core::Error) -> Self {
        match e {
            coda_core::Error::Numerical(_) | coda_core::Error::NonFiniteGradient { .. } => {
                CliError::numeric(e.to_string())
            }
            _ => CliError::input(e.to_string()),
        }
    }
}

fn read_batch(path: &Path) -> Result<HiddenStateBatch, CliError> {
    hsb::read_file(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_batch(path: &Path, batch: &HiddenStateBatch) -> Result<(), CliError> {
    hsb::write_file(path, batch).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, s: &str) -> Result<(), CliError> {
    std::fs::write(path, s).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), CliError> {
    c.write_file(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not errors and go to stdout
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_INPUT;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a, stderr),
        Command::Steer(a) => cmd_steer(&a),
        Command::Diagnose(a) => cmd_diagnose(&a, stdout),
        Command::Inspect(a) => cmd_inspect(&a, stdout),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut config = ToyWorldConfig {
        d: a.d,
        seed: a.seed,
        ..Default::default()
    };
    if a.no_shift {
        config.rotation_deg = 0.0;
        config.shift_norm = 0.0;
    }
    let world = ToyWorld::with_config(config)?;
    let data = synth_with_dtype(&world, a.n_source, a.n_target, a.data_seed, a.dtype.into())?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::input(format!("{}: {e}", a.out_dir.display())))?;
    write_batch(&a.out_dir.join("source_raw.hsb"), data.source.raw())?;
    write_batch(&a.out_dir.join("source_teacher.hsb"), data.source.teacher())?;
    write_batch(&a.out_dir.join("target_raw.hsb"), data.target.raw())?;
    write_text(
        &a.out_dir.join("target_labels.txt"),
        &text::format_labels(&data.target_labels),
    )
}

pub fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".history.csv");
        PathBuf::from(s)
    })
}

pub fn train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    if !a.alpha.is_finite() {
        return Err(CliError::input(format!("alpha must be finite, got {}", a.alpha)));
    }
    let config = TrainConfig {
        lr: a.lr,
        batch_source: a.batch_source,
        batch_target: a.batch_target,
        lambda: a.lambda,
        max_epochs: a.epochs,
        seed: a.seed,
        kernel: a.kernel.spec()?,
        adapter_r: a.adapter_r,
        convergence_eps: a.convergence_eps,
        patience: a.patience,
        ..Default::default()
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(a: &TrainArgs, stderr: &mut dyn Write) -> Result<(), CliError> {
    let config = train_config(a)?;
    let raw = read_batch(&a.source_raw)?;
    let teacher = read_batch(&a.source_teacher)?;
    let target = TargetDataset::new(read_batch(&a.target_raw)?);
    let source = pair_source(raw, teacher, None)?;

    let start = Instant::now();
    let (params, mut history) = match train(&source, &target, &config) {
        Ok(r) => r,
        Err(TrainError::Invalid(e)) => return Err(e.into()),
        Err(TrainError::Diverged {
            epoch,
            step,
            diagnostic,
            last_good,
        }) => {
            let mut path = a.out.clone().into_os_string();
            path.push(".last_good");
            let path = PathBuf::from(path);
            write_checkpoint(&path, &Checkpoint::new(*last_good, a.alpha))?;
            return Err(CliError::numeric(format!(
                "training diverged at epoch {epoch}, step {step}: {diagnostic}; last good parameters written to {}",
                path.display()
            )));
        }
    };
    history.wall_time_secs = Some(start.elapsed().as_secs_f64());

    write_checkpoint(&a.out, &Checkpoint::new(params, a.alpha))?;
    write_text(&history_path(a), &text::format_history(&history))?;
    // timing is not part of any output file, so reruns stay byte-identical
    let _ = writeln!(
        stderr,
        "trained {} epochs ({}), {} steps in {:.3} s",
        history.records.len(),
        history.stop.as_str(),
        history.steps,
        history.wall_time_secs.unwrap_or(0.0)
    );
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::read_file(path).map_err(|e: CheckpointError| CliError::input(format!("{}: {e}", path.display())))
}

pub fn cmd_steer(a: &SteerArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.adapter)?;
    let input = read_batch(&a.input)?;
    let params: &AdapterParams = &ckpt.params;
    if params.d() != input.d() {
        return Err(CliError::input(format!(
            "adapter expects d={}, {} has d={}",
            params.d(),
            a.input.display(),
            input.d()
        )));
    }
    let alpha = a.alpha.unwrap_or(ckpt.alpha);
    let steered = batch_steer(params, &input, alpha).map_err(|e| match e {
        coda_core::Error::NonFinite { row, col } => CliError::numeric(format!(
            "steered state is not finite at row {row}, column {col}"
        )),
        e => e.into(),
    })?;
    write_batch(&a.out, &steered)
}

pub fn cmd_diagnose(a: &DiagnoseArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let kernel = a.kernel.spec()?;
    let sa = read_batch(&a.a)?;
    let sb = read_batch(&a.b)?;
    if sa.d() != sb.d() {
        return Err(CliError::input(format!(
            "{} has d={}, {} has d={}",
            a.a.display(),
            sa.d(),
            a.b.display(),
            sb.d()
        )));
    }
    let total = sa.n() + sb.n();
    if a.k == 0 || a.k >= total {
        return Err(CliError::input(format!(
            "--k must be between 1 and {} (point count minus one), got {}",
            total - 1,
            a.k
        )));
    }
    let set = LabeledPointSet::from_domains(sa.values(), sb.values())?;
    let r = assess(&set, a.k, &kernel, a.space.into())?;
    let sigmas = r.kernel.sigmas().map(text::join).unwrap_or_default();
    let out = format!(
        "n_a={}\nn_b={}\nd={}\nspace={}\nk={}\nsilhouette={}\nmixing_pct={}\nmmd2={}\nsigmas={}\n",
        sa.n(),
        sb.n(),
        sa.d(),
        r.space.as_str(),
        r.k,
        r.silhouette,
        r.mixing_pct,
        r.mmd2,
        sigmas
    );
    stdout
        .write_all(out.as_bytes())
        .map_err(|e| CliError::input(format!("standard output: {e}")))
}

pub fn cmd_inspect(a: &InspectArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.path).map_err(|e| CliError::input(format!("{}: {e}", a.path.display())))?;
    let records = hsb::decode_all(&bytes).map_err(|e: HsbError| CliError::input(format!("{}: {e}", a.path.display())))?;
    let mut out = format!("records={}\n", records.len());
    for (i, r) in records.iter().enumerate() {
        out += &format!(
            "[{i}] n={} d={} dtype={} layer={} tag={:?} model={:?}\n",
            r.n(),
            r.d(),
            r.dtype().name(),
            r.layer_index(),
            r.domain_tag(),
            r.model_id()
        );
    }
    stdout
        .write_all(out.as_bytes())
        .map_err(|e| CliError::input(format!("standard output: {e}")))
}
