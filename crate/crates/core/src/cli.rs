//! Command-line front end.
//!
//! Every subcommand computes its full result before touching the file
//! system, so a failing run leaves no partial outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{averaging_curve, classification_error, AveragingConfig, AveragingMode};
use crate::io::dataset::{cifar10_paths, load_cifar10_files};
use crate::io::preprocess::{ContrastSettings, DEFAULT_CONTRAST_EPS, DEFAULT_CONTRAST_SCALE, DEFAULT_ZCA_EPS};
use crate::io::{
    csv_string, fmt_f64, load_checkpoint, make_synthetic, write_atomic, Checkpoint, Dataset,
    PreprocessModel, SyntheticSpec,
};
use crate::network::{Model, ModelConfig, UnitType};
use crate::numerics::RngStream;
use crate::probes::{export_filters, invariance_curve, paired_probe_csv, sampling_frequency_check, Sweep};
use crate::subspace::LAMBDA_GRID;
use crate::training::{retrain_full, train, AugmentSpec, History, LambdaSchedule, LossKind, SgdConfig};

#[derive(Debug, Parser)]
#[command(name = "probout", version, about = "Train and analyse maxout/probout convolutional networks")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, env = "PROBOUT_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores, 1 runs sequentially.
    #[arg(long, default_value_t = 0, global = true)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with early stopping on the validation split.
    Train(TrainArgs),
    /// Train on training + validation data for a fixed number of epochs.
    RetrainFull(RetrainArgs),
    /// Classification error of a checkpoint.
    Eval(EvalArgs),
    /// Error against the number of averaged model evaluations.
    AveragingCurve(CurveArgs),
    /// Feature distances under vertical translation and rotation.
    ProbeInvariance(ProbeArgs),
    /// Write the filters of a convolutional layer as a PGM/PPM grid.
    ExportFilters(FilterArgs),
    /// Compare probout selection frequencies with their probabilities.
    SampleCheck(SampleArgs),
    /// Validation error over a grid of λ values, one layer at a time.
    LambdaGrid(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    None,
    Gcn,
    Zca,
    GcnZca,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory with the CIFAR-10 binary batches; synthetic data otherwise.
    #[arg(long)]
    pub cifar_dir: Option<PathBuf>,
    /// Synthetic classes.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Synthetic image side length.
    #[arg(long, default_value_t = 16)]
    pub image_size: usize,
    /// Synthetic pixel noise.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Synthetic per-example jitter in pixels.
    #[arg(long, default_value_t = 2)]
    pub jitter: usize,
    /// Seed of the synthetic data (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Training examples (CIFAR-10: a prefix of the training batches).
    #[arg(long, default_value_t = 2000)]
    pub train_count: usize,
    /// Validation examples, taken after the training examples.
    #[arg(long, default_value_t = 500)]
    pub valid_count: usize,
    /// Synthetic test examples.
    #[arg(long, default_value_t = 500)]
    pub test_count: usize,
    #[arg(long, value_enum, default_value_t = Preprocess::None)]
    pub preprocess: Preprocess,
    #[arg(long, default_value_t = DEFAULT_CONTRAST_SCALE)]
    pub contrast_scale: f64,
    #[arg(long, default_value_t = DEFAULT_CONTRAST_EPS)]
    pub contrast_eps: f64,
    #[arg(long, default_value_t = DEFAULT_ZCA_EPS)]
    pub zca_eps: f64,
}

/// Resolved description of the data, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub cifar_dir: Option<PathBuf>,
    pub classes: usize,
    pub image_size: usize,
    pub noise: f64,
    pub jitter: usize,
    pub data_seed: u64,
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    pub preprocess: Preprocess,
    pub contrast_scale: f64,
    pub contrast_eps: f64,
    pub zca_eps: f64,
}

impl DataArgs {
    fn spec(&self, seed: u64) -> DataSpec {
        DataSpec {
            cifar_dir: self.cifar_dir.clone(),
            classes: self.classes,
            image_size: self.image_size,
            noise: self.noise,
            jitter: self.jitter,
            data_seed: self.data_seed.unwrap_or(seed),
            train_count: self.train_count,
            valid_count: self.valid_count,
            test_count: self.test_count,
            preprocess: self.preprocess,
            contrast_scale: self.contrast_scale,
            contrast_eps: self.contrast_eps,
            zca_eps: self.zca_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Preprocessed train/valid/test splits.
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    fn get(&self, s: Split) -> &Dataset {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

fn take(ds: &Dataset, from: usize, n: usize, what: &str) -> Result<Dataset> {
    if n == 0 || from + n > ds.len() {
        return Err(Error::Config(format!(
            "{what}: need examples {from}..{} of {}",
            from + n,
            ds.len()
        )));
    }
    ds.subset(&(from..from + n).collect::<Vec<_>>())
}

/// Loads the raw splits and fits preprocessing on `fit_on` (train or
/// train + valid), then applies it unchanged to every split.
pub fn load_splits(spec: &DataSpec, fit_on_train_and_valid: bool, exec: Execution) -> Result<Splits> {
    let (train, valid, test) = match &spec.cifar_dir {
        Some(dir) => {
            let (train_paths, test_path) = cifar10_paths(dir);
            let all = load_cifar10_files(&train_paths, exec)?;
            let test = load_cifar10_files(&[test_path], exec)?;
            (
                take(&all, 0, spec.train_count, "training split")?,
                take(&all, all.len().saturating_sub(spec.valid_count), spec.valid_count, "validation split")?,
                test,
            )
        }
        None => {
            let total = spec.train_count + spec.valid_count + spec.test_count;
            let per_class = total.div_ceil(spec.classes.max(1));
            let s = spec.image_size;
            let all = make_synthetic(&SyntheticSpec {
                shape: [3, s, s],
                noise: spec.noise,
                max_shift: spec.jitter,
                ..SyntheticSpec::new(spec.classes, per_class, spec.data_seed)
            })?;
            (
                take(&all, 0, spec.train_count, "training split")?,
                take(&all, spec.train_count, spec.valid_count, "validation split")?,
                take(&all, spec.train_count + spec.valid_count, spec.test_count, "test split")?,
            )
        }
    };
    let contrast = matches!(spec.preprocess, Preprocess::Gcn | Preprocess::GcnZca).then_some(ContrastSettings {
        scale: spec.contrast_scale,
        eps: spec.contrast_eps,
    });
    let zca = matches!(spec.preprocess, Preprocess::Zca | Preprocess::GcnZca).then_some(spec.zca_eps);
    let mut pre = PreprocessModel::new(contrast, zca);
    if fit_on_train_and_valid {
        pre.fit(&Dataset::concat(&[train.clone(), valid.clone()])?)?;
    } else {
        pre.fit(&train)?;
    }
    Ok(Splits {
        train: pre.apply(&train)?,
        valid: pre.apply(&valid)?,
        test: pre.apply(&test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// 16x16 input, three conv layers (8/16/16 units) and a 32-unit fc layer.
    Desk,
    /// 32x32 input, 48/128 conv units and a 240-unit fc layer.
    CifarTwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Unit {
    Probout,
    Maxout,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model configuration as JSON; overrides --arch and --unit.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Arch::Desk)]
    pub arch: Arch,
    #[arg(long, value_enum, default_value_t = Unit::Probout)]
    pub unit: Unit,
    /// Initial λ per hidden layer, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl ModelArgs {
    fn config(&self, classes: usize) -> Result<ModelConfig> {
        let mut cfg = match &self.model_config {
            Some(path) => read_json::<ModelConfig>(path)?,
            None => {
                let unit = |l: usize| match self.unit {
                    Unit::Probout => ModelConfig::default_probout(l),
                    Unit::Maxout => UnitType::Maxout,
                };
                let mut cfg = match self.arch {
                    Arch::Desk => ModelConfig::desk_scale(classes, unit),
                    Arch::CifarTwoStage => ModelConfig::cifar_two_stage(unit),
                };
                if let Some(crate::network::LayerSpec::Softmax { classes: c }) = cfg.layers.last_mut() {
                    *c = classes;
                }
                cfg
            }
        };
        if let Some(l) = &self.lambdas {
            cfg = cfg.with_lambdas(l)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SgdArgs {
    /// SGD settings as JSON (missing fields take defaults); flags override.
    #[arg(long)]
    pub sgd_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Model evaluations per validation example.
    #[arg(long)]
    pub valid_evaluations: Option<usize>,
    /// Random translation of training images, in pixels.
    #[arg(long)]
    pub augment_shift: Option<usize>,
    /// Random horizontal flips of training images.
    #[arg(long)]
    pub flip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    BinarySum,
    Categorical,
}

impl SgdArgs {
    fn config(&self, seed: u64, exec: Execution) -> Result<SgdConfig> {
        let mut c = match &self.sgd_config {
            Some(p) => read_json::<SgdConfig>(p)?,
            None => SgdConfig { epochs_max: 50, ..SgdConfig::default() },
        };
        c.seed = seed;
        c.execution = exec;
        if let Some(v) = self.epochs {
            c.epochs_max = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.lr_decay {
            c.lr_decay = v;
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.loss {
            c.loss = match v {
                LossArg::BinarySum => LossKind::BinarySum,
                LossArg::Categorical => LossKind::Categorical,
            };
        }
        if let Some(v) = self.valid_evaluations {
            c.valid_evaluations = v;
        }
        if self.augment_shift.is_some() || self.flip {
            c.augment = Some(AugmentSpec {
                max_shift: self.augment_shift.unwrap_or(0),
                flip: self.flip,
            });
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RetrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    /// Number of epochs; defaults to the epoch count recorded in --from.
    #[arg(long)]
    pub epochs_fixed: Option<usize>,
    /// Checkpoint of an early-stopped run whose best epoch sets the length.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Average of E sampled passes.
    Sample,
    /// Maximum in place of sampling.
    Max,
    /// Probability-weighted responses.
    ProbWeight,
    /// All three, one row each.
    All,
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Replaces the stored CIFAR-10 directory.
    #[arg(long)]
    pub cifar_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Evaluate maxout layers as probout units with this λ (sampling on
    /// maxout-trained weights).
    #[arg(long)]
    pub sample_maxout_lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    pub mode: ModeArg,
    /// Model evaluations averaged per example.
    #[arg(short = 'E', long = "evaluations", default_value_t = 50)]
    pub evaluations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(short = 'E', long = "evaluations", value_delimiter = ',', default_value = "1,5,10,20,50")]
    pub evaluations: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    /// `name=checkpoint`; repeat to compare models in one table.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub cifar_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Randomly chosen images (seeded).
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    /// Vertical translations from -N to N pixels.
    #[arg(long, default_value_t = 15)]
    pub max_translation: usize,
    /// Rotation step in degrees over 0..360.
    #[arg(long, default_value_t = 10.0)]
    pub rotation_step: f64,
    /// Hidden layers by name (conv1, fc1, ...); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer name, e.g. conv1.
    #[arg(long, default_value = "conv1")]
    pub layer: String,
    /// Output PGM or PPM file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// Linear responses of one unit.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub z: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Number of draws.
    #[arg(short = 'N', long = "draws", default_value_t = 100_000)]
    pub draws: usize,
    /// Include the dropped outcome.
    #[arg(long)]
    pub dropout: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    /// Candidate λ values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execution(threads: usize) -> Execution {
    if threads == 1 {
        return Execution::Sequential;
    }
    #[cfg(feature = "parallel")]
    if threads > 1 {
        // Only the first configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Execution::default()
}

/// Files to write once the whole command has succeeded.
#[derive(Default)]
struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, path: Option<&PathBuf>, bytes: impl Into<Vec<u8>>) {
        if let Some(p) = path {
            self.0.push((p.clone(), bytes.into()));
        }
    }

    fn write(self) -> Result<()> {
        for (path, _) in &self.0 {
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
            if let Some(dir) = parent.filter(|d| !d.is_dir()) {
                return Err(Error::MissingFile(dir.to_path_buf()));
            }
        }
        for (path, bytes) in self.0 {
            write_atomic(&path, &bytes)?;
        }
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let exec = execution(cli.threads);
    let seed = cli.seed;
    let mut out = Outputs::default();
    match &cli.command {
        Command::Train(a) => cmd_train(a, seed, exec, &mut out)?,
        Command::RetrainFull(a) => cmd_retrain(a, seed, exec, &mut out)?,
        Command::Eval(a) => cmd_eval(a, seed, exec, &mut out)?,
        Command::AveragingCurve(a) => cmd_curve(a, seed, exec, &mut out)?,
        Command::ProbeInvariance(a) => cmd_probe(a, seed, exec, &mut out)?,
        Command::ExportFilters(a) => cmd_filters(a, &mut out)?,
        Command::SampleCheck(a) => cmd_sample(a, seed, &mut out)?,
        Command::LambdaGrid(a) => cmd_grid(a, seed, exec, &mut out)?,
    }
    out.write()
}

fn history_meta(h: &History) -> Value {
    json!({ "best_epoch": h.best_epoch, "epochs_run": h.epochs_run })
}

fn cmd_train(a: &TrainArgs, seed: u64, exec: Execution, out: &mut Outputs) -> Result<()> {
    let spec = a.data.spec(seed);
    let sgd = a.sgd.config(seed, exec)?;
    let splits = load_splits(&spec, false, exec)?;
    let config = a.model.config(splits.train.classes())?;
    let model = Model::<f32>::init(config.clone(), seed)?;
    let schedule = LambdaSchedule::from_config(&config, sgd.epochs_max);
    let (best, history) = train(&model, &splits.train, &splits.valid, &sgd, &schedule)?;
    let best_error = history.records[history.best_epoch.max(1) - 1].valid_error.unwrap_or(f64::NAN);
    eprintln!(
        "trained {} epochs; best epoch {} with validation error {best_error:.2}%",
        history.epochs_run, history.best_epoch
    );
    let ckpt = Checkpoint {
        config: best.config.clone(),
        params: best.params,
        epoch: history.best_epoch as u64,
        seed,
        schedule: Some(schedule),
        meta: json!({ "data": spec, "sgd": sgd, "history": history_meta(&history), "fit": "train" }),
    };
    out.add(Some(&a.out), ckpt.encode()?);
    out.add(a.history.as_ref(), history.to_csv(&config.hidden_names())?);
    Ok(())
}

fn cmd_retrain(a: &RetrainArgs, seed: u64, exec: Execution, out: &mut Outputs) -> Result<()> {
    let epochs = match (a.epochs_fixed, &a.from) {
        (Some(n), _) => n,
        (None, Some(p)) => {
            let prior = load_checkpoint(p)?;
            prior.meta["history"]["best_epoch"]
                .as_u64()
                .ok_or_else(|| Error::Config(format!("{} records no best epoch", p.display())))? as usize
        }
        (None, None) => return Err(Error::Config("retrain-full needs --epochs-fixed or --from".into())),
    };
    let spec = a.data.spec(seed);
    let sgd = a.sgd.config(seed, exec)?;
    let splits = load_splits(&spec, true, exec)?;
    let full = Dataset::concat(&[splits.train, splits.valid])?;
    let config = a.model.config(full.classes())?;
    let model = Model::<f32>::init(config.clone(), seed)?;
    let schedule = LambdaSchedule::from_config(&config, epochs);
    let (trained, history) = retrain_full(&model, &full, epochs, &sgd, &schedule)?;
    eprintln!("retrained {epochs} epochs on {} examples", full.len());
    let ckpt = Checkpoint {
        config: trained.config.clone(),
        params: trained.params,
        epoch: epochs as u64,
        seed,
        schedule: Some(schedule),
        meta: json!({ "data": spec, "sgd": sgd, "history": history_meta(&history), "fit": "train+valid" }),
    };
    out.add(Some(&a.out), ckpt.encode()?);
    out.add(a.history.as_ref(), history.to_csv(&config.hidden_names())?);
    Ok(())
}

/// Test-time model (weights halved) and the evaluation split of a checkpoint.
fn checkpoint_setup(a: &CheckpointArgs, exec: Execution) -> Result<(Model<f32>, Dataset)> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (model, data) = model_and_data(&ck, a.cifar_dir.as_ref(), a.split, exec)?;
    let model = match a.sample_maxout_lambda {
        Some(l) => {
            let cfg = model.config.with_units(|i| match model.config.hidden()[i].unit() {
                Some(UnitType::Maxout) => UnitType::Probout { lambda: l },
                Some(u) => u,
                None => UnitType::Maxout,
            });
            Model::new(cfg, model.params)?
        }
        None => model,
    };
    Ok((model, data))
}

fn model_and_data(
    ck: &Checkpoint,
    cifar_dir: Option<&PathBuf>,
    split: Split,
    exec: Execution,
) -> Result<(Model<f32>, Dataset)> {
    let mut spec: DataSpec = serde_json::from_value(ck.meta["data"].clone())
        .map_err(|e| Error::Config(format!("checkpoint has no usable data description: {e}")))?;
    if let Some(d) = cifar_dir {
        spec.cifar_dir = Some(d.clone());
    }
    let both = ck.meta["fit"].as_str() == Some("train+valid");
    let splits = load_splits(&spec, both, exec)?;
    Ok((ck.model()?.halve_weights(), splits.get(split).clone()))
}

fn cmd_eval(a: &EvalArgs, seed: u64, exec: Execution, out: &mut Outputs) -> Result<()> {
    let (model, data) = checkpoint_setup(&a.ckpt, exec)?;
    let modes: Vec<AveragingMode> = match a.mode {
        ModeArg::Sample => vec![AveragingMode::SampleAverage],
        ModeArg::Max => vec![AveragingMode::MaxAtTest],
        ModeArg::ProbWeight => vec![AveragingMode::ProbWeightAtTest],
        ModeArg::All => vec![AveragingMode::SampleAverage, AveragingMode::MaxAtTest, AveragingMode::ProbWeightAtTest],
    };
    let mut rows = Vec::new();
    for mode in modes {
        let cfg = AveragingConfig {
            evaluations: if mode == AveragingMode::SampleAverage { a.evaluations } else { 1 },
            seed,
            mode,
            execution: exec,
        };
        let err = classification_error(&model, &data, &cfg)?;
        println!("{}\tE={}\terror={err:.4}%", mode.label(), cfg.evaluations);
        rows.push(vec![mode.label().to_string(), cfg.evaluations.to_string(), fmt_f64(err)]);
    }
    out.add(a.out.as_ref(), csv_string(&["mode", "evaluations", "error_percent"], &rows)?);
    Ok(())
}

fn cmd_curve(a: &CurveArgs, seed: u64, exec: Execution, out: &mut Outputs) -> Result<()> {
    let (model, data) = checkpoint_setup(&a.ckpt, exec)?;
    let rows = averaging_curve(&model, &data, &a.evaluations, a.repeats, seed, exec)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            println!("E={}\tmean={:.4}%\tstd={:.4}", r.evaluations, r.mean_error, r.std_error);
            vec![r.evaluations.to_string(), fmt_f64(r.mean_error), fmt_f64(r.std_error)]
        })
        .collect();
    out.add(a.out.as_ref(), csv_string(&["E", "mean_error_percent", "std_percent"], &table)?);
    Ok(())
}

fn cmd_probe(a: &ProbeArgs, seed: u64, exec: Execution, out: &mut Outputs) -> Result<()> {
    let sweep = Sweep::translations(a.max_translation).then(Sweep::rotations(a.rotation_step)?);
    let mut results = Vec::new();
    for m in &a.models {
        let (name, path) = m
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--model expects name=checkpoint, got {m}")))?;
        let ck = load_checkpoint(Path::new(path))?;
        let (model, data) = model_and_data(&ck, a.cifar_dir.as_ref(), a.split, exec)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut RngStream::new(seed, 0));
        let images: Vec<_> = order.iter().take(a.images).map(|&i| data.image::<f32>(i)).collect();
        let rows = invariance_curve(&model, &images, &sweep, &a.layers, exec)?;
        eprintln!("{name}: {} rows", rows.len());
        results.push((name.to_string(), rows));
    }
    let groups: Vec<(&str, &[_])> = results.iter().map(|(n, r)| (n.as_str(), r.as_slice())).collect();
    let csv = paired_probe_csv(&groups)?;
    if a.out.is_none() {
        print!("{csv}");
    }
    out.add(a.out.as_ref(), csv);
    Ok(())
}

fn cmd_filters(a: &FilterArgs, out: &mut Outputs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model()?;
    let names = model.config.hidden_names();
    let layer = names
        .iter()
        .position(|n| *n == a.layer)
        .ok_or_else(|| Error::Config(format!("unknown layer {}; model has {names:?}", a.layer)))?;
    let grid = export_filters(&model, layer)?;
    out.add(Some(&a.out), grid.image.encode()?);
    Ok(())
}

fn cmd_sample(a: &SampleArgs, seed: u64, out: &mut Outputs) -> Result<()> {
    let r = sampling_frequency_check(&a.z, a.lambda, a.draws, a.dropout, &mut RngStream::new(seed, 0))?;
    let rows: Vec<Vec<String>> = (0..r.expected.len())
        .map(|i| {
            let outcome = match (a.dropout, i) {
                (true, 0) => "dropped".to_string(),
                (true, i) => (i - 1).to_string(),
                (false, i) => i.to_string(),
            };
            vec![outcome, fmt_f64(r.expected[i]), fmt_f64(r.observed[i]), fmt_f64(r.deviation_sigma[i])]
        })
        .collect();
    let csv = csv_string(&["outcome", "expected", "observed", "deviation_sigma"], &rows)?;
    print!("{csv}");
    println!("{} (max deviation {:.3} sigma)", if r.passed { "PASS" } else { "FAIL" }, r.max_sigma);
    out.add(a.out.as_ref(), csv);
    Ok(())
}

fn cmd_grid(a: &GridArgs, seed: u64, exec: Execution, out: &mut Outputs) -> Result<()> {
    let spec = a.data.spec(seed);
    let sgd = a.sgd.config(seed, exec)?;
    let splits = load_splits(&spec, false, exec)?;
    let base = a.model.config(splits.train.classes())?;
    let grid = a.grid.clone().unwrap_or_else(|| LAMBDA_GRID.to_vec());
    if grid.is_empty() {
        return Err(Error::Config("empty λ grid".into()));
    }
    let names = base.hidden_names();
    let lambdas = base.lambdas();
    let mut rows = Vec::new();
    for (layer, initial) in lambdas.iter().enumerate() {
        if initial.is_none() {
            continue;
        }
        for &l in &grid {
            let mut trial: Vec<f64> = lambdas.iter().map(|v| v.unwrap_or(1.0)).collect();
            trial[layer] = l;
            let cfg = base.with_lambdas(&trial)?;
            let model = Model::<f32>::init(cfg.clone(), seed)?;
            let schedule = LambdaSchedule::from_config(&cfg, sgd.epochs_max);
            let (_, h) = train(&model, &splits.train, &splits.valid, &sgd, &schedule)?;
            let err = h.records[h.best_epoch.max(1) - 1].valid_error.unwrap_or(f64::NAN);
            eprintln!("{} λ={l}: {err:.2}% at epoch {}", names[layer], h.best_epoch);
            rows.push(vec![names[layer].clone(), fmt_f64(l), fmt_f64(err), h.best_epoch.to_string()]);
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("the model has no probout layer to tune".into()));
    }
    let csv = csv_string(&["layer", "lambda", "valid_error_percent", "best_epoch"], &rows)?;
    if a.out.is_none() {
        print!("{csv}");
    }
    out.add(a.out.as_ref(), csv);
    Ok(())
}
