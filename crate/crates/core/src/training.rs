//! Minibatch SGD with momentum, per-layer λ annealing and validation-based
//! early stopping.

use rand::seq::SliceRandom;
use rand::RngCore as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{classification_error, AveragingConfig};
use crate::io::{csv_string, fmt_f64, Dataset};
use crate::io::preprocess::augment_image;
use crate::network::{Model, Parameters};
use crate::numerics::{Real, RngStream};
use crate::subspace::SamplingMode;

/// Probabilities are clamped to `[CLAMP, 1]` before taking logarithms.
pub const CLAMP: f64 = 1e-12;

// Stream ids under the run seed.
const SHUFFLE_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;
const BATCH_STREAM: u64 = 4;
const VALID_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `-Σ y_i log o_i + (1 - y_i) log(1 - o_i)`.
    #[default]
    BinarySum,
    /// `-Σ y_i log o_i`.
    Categorical,
}

pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::Label(format!("label {label} with {classes} classes")));
    }
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    Ok(y)
}

fn target_of(y: &[f64]) -> Result<usize> {
    let ones: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1.0).collect();
    if ones.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Label(format!("target {y:?} is not one-hot")));
    }
    Ok(ones[0])
}

// 1 - o_i as the sum of the other entries; no cancellation near o_i = 1.
fn complements<T: Real>(o: &[T]) -> Vec<f64> {
    (0..o.len())
        .map(|i| {
            let q: f64 = o.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v.as_f64()).sum();
            q.clamp(CLAMP, 1.0)
        })
        .collect()
}

/// Loss of output probabilities `o` against one-hot `y`, in `f64`.
pub fn cross_entropy<T: Real>(o: &[T], y: &[f64], kind: LossKind) -> Result<f64> {
    if o.len() != y.len() {
        return Err(Error::dim(format!("{} outputs for a {}-class target", o.len(), y.len())));
    }
    let t = target_of(y)?;
    let log_o = |i: usize| o[i].as_f64().clamp(CLAMP, 1.0).ln();
    Ok(match kind {
        LossKind::Categorical => -log_o(t),
        LossKind::BinarySum => {
            let q = complements(o);
            -log_o(t) - (0..o.len()).filter(|&i| i != t).map(|i| q[i].ln()).sum::<f64>()
        }
    })
}

/// `dL/do` (probability space).
pub fn loss_grad_probs<T: Real>(o: &[T], y: &[f64], kind: LossKind) -> Result<Vec<T>> {
    let t = target_of(y)?;
    let q = complements(o);
    Ok((0..o.len())
        .map(|i| {
            let oi = o[i].as_f64().max(CLAMP);
            let g = match (kind, i == t) {
                (_, true) => -1.0 / oi,
                (LossKind::Categorical, false) => 0.0,
                (LossKind::BinarySum, false) => 1.0 / q[i],
            };
            T::lit(g)
        })
        .collect())
}

/// `dL/dz` for the softmax input `z` with `o = softmax(z)`.
///
/// For the binary-sum loss with target `t` and `r_i = o_i / (1 - o_i)`:
/// `dL/dz_t = o_t - 1 - o_t Σ_{i≠t} r_i` and, for `j ≠ t`,
/// `dL/dz_j = 2 o_j - o_j Σ_{i≠t,j} r_i`. Every product stays bounded even
/// when some `o_i` is close to one.
pub fn loss_grad_logits<T: Real>(o: &[T], y: &[f64], kind: LossKind) -> Result<Vec<T>> {
    if o.len() != y.len() {
        return Err(Error::dim(format!("{} outputs for a {}-class target", o.len(), y.len())));
    }
    let t = target_of(y)?;
    let of: Vec<f64> = o.iter().map(|v| v.as_f64()).collect();
    let g: Vec<f64> = match kind {
        LossKind::Categorical => (0..of.len()).map(|i| of[i] - y[i]).collect(),
        LossKind::BinarySum => {
            let q = complements(o);
            let r: Vec<f64> = (0..of.len()).map(|i| if i == t { 0.0 } else { of[i] / q[i] }).collect();
            (0..of.len())
                .map(|j| {
                    if j == t {
                        let big_r: f64 = r.iter().sum();
                        of[t] - 1.0 - of[t] * big_r
                    } else {
                        let rest: f64 = (0..of.len()).filter(|&i| i != j).map(|i| r[i]).sum();
                        2.0 * of[j] - of[j] * rest
                    }
                })
                .collect()
        }
    };
    Ok(g.into_iter().map(T::lit).collect())
}

/// Per hidden layer λ over training. Layers with λ > 0.5 fall linearly to
/// `max(λ - 0.9, 0.05)` at `epochs_total`; the rest stay constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    /// `None` for maxout layers.
    pub initial: Vec<Option<f64>>,
    pub epochs_total: usize,
}

pub const ANNEAL_THRESHOLD: f64 = 0.5;
pub const ANNEAL_DROP: f64 = 0.9;
pub const LAMBDA_FLOOR: f64 = 0.05;

impl LambdaSchedule {
    pub fn new(initial: Vec<Option<f64>>, epochs_total: usize) -> Self {
        Self { initial, epochs_total }
    }

    pub fn from_config(config: &crate::network::ModelConfig, epochs_total: usize) -> Self {
        Self::new(config.lambdas(), epochs_total)
    }

    pub fn anneals(lambda: f64) -> bool {
        lambda > ANNEAL_THRESHOLD
    }

    pub fn final_lambda(lambda: f64) -> f64 {
        if Self::anneals(lambda) {
            (lambda - ANNEAL_DROP).max(LAMBDA_FLOOR)
        } else {
            lambda
        }
    }

    pub fn lambda_at(&self, epoch: usize) -> Result<Vec<Option<f64>>> {
        if epoch > self.epochs_total {
            return Err(Error::Range(format!("epoch {epoch} beyond schedule of {}", self.epochs_total)));
        }
        let t = if self.epochs_total == 0 {
            0.0
        } else {
            epoch as f64 / self.epochs_total as f64
        };
        Ok(self
            .initial
            .iter()
            .map(|l| l.map(|l0| (1.0 - t) * l0 + t * Self::final_lambda(l0)))
            .collect())
    }
}

/// Random translation (and optional horizontal flip) applied to each
/// training example as it is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub max_shift: usize,
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate once per epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Model evaluations per validation example.
    pub valid_evaluations: usize,
    pub augment: Option<AugmentSpec>,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            learning_rate: 0.05,
            lr_decay: 0.995,
            momentum: 0.9,
            epochs_max: 100,
            patience: 10,
            seed: 0,
            loss: LossKind::BinarySum,
            valid_evaluations: 10,
            augment: None,
            execution: Execution::default(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.valid_evaluations == 0 {
            return Err(Error::Config("validation needs E >= 1".into()));
        }
        Ok(())
    }
}

/// `v <- m v - lr g; p <- p + v`.
pub fn sgd_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    velocity: &mut Parameters<T>,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    let (m, lr) = (T::lit(momentum), T::lit(learning_rate));
    let triples = params.tensors_mut().zip(grads.tensors()).zip(velocity.tensors_mut());
    for ((p, g), v) in triples {
        p.check_same_shape(g)?;
        p.check_same_shape(v)?;
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi - lr * gi;
            *pi = *pi + *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lambdas: Vec<Option<f64>>,
    /// Mean loss per training example over the epoch.
    pub train_loss: f64,
    /// Validation error in percent; absent when training without validation.
    pub valid_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl History {
    pub fn to_csv(&self, layer_names: &[String]) -> Result<String> {
        let mut header = vec!["epoch".to_string()];
        header.extend(layer_names.iter().map(|n| format!("lambda_{n}")));
        header.extend(["train_loss".to_string(), "valid_error".to_string()]);
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.epoch.to_string()];
                row.extend(r.lambdas.iter().map(|l| l.map(fmt_f64).unwrap_or_default()));
                row.push(fmt_f64(r.train_loss));
                row.push(r.valid_error.map(fmt_f64).unwrap_or_default());
                row
            })
            .collect();
        csv_string(&header, &rows)
    }
}

/// Mean loss and parameter gradient over `batch`, each example sampled from
/// its own stream. Per-example results are summed in batch order.
pub fn batch_gradient<T: Real>(
    model: &Model<T>,
    data: &Dataset,
    batch: &[usize],
    loss: LossKind,
    augment: Option<AugmentSpec>,
    rng: &RngStream,
    execution: Execution,
) -> Result<(f64, Parameters<T>)> {
    let per_example = execution.try_map(batch.len(), |b| -> Result<(f64, Parameters<T>)> {
        let i = batch[b];
        let mut x = data.image::<T>(i);
        if let Some(a) = augment {
            x = augment_image(&x, &mut rng.fork_path(&[AUGMENT_STREAM, b as u64]), a.max_shift, a.flip)?;
        }
        let mut stream = rng.fork_path(&[SAMPLE_STREAM, b as u64]);
        let pass = model.forward(&x, SamplingMode::TrainSampleDropout, &mut stream, true)?;
        let y = one_hot(data.labels()[i], model.config.classes())?;
        let l = cross_entropy(&pass.probs, &y, loss)?;
        let g = model.backward_logits(&pass, &loss_grad_logits(&pass.probs, &y, loss)?)?;
        Ok((l, g))
    })?;
    let mut total = 0.0;
    let mut grads = model.params.zeros_like();
    for (l, g) in &per_example {
        total += l;
        grads.add_assign(g)?;
    }
    let n = batch.len().max(1);
    grads.scale(T::lit(1.0 / n as f64));
    Ok((total / n as f64, grads))
}

fn lambdas_for(model: &Model<impl Real>, lambdas: &[Option<f64>]) -> Result<crate::network::ModelConfig> {
    let filled: Vec<f64> = lambdas.iter().map(|l| l.unwrap_or(1.0)).collect();
    model.config.with_lambdas(&filled)
}

struct Run<'a> {
    data: &'a Dataset,
    cfg: &'a SgdConfig,
}

impl Run<'_> {
    /// One epoch at λ = schedule(epoch); returns the mean training loss.
    fn epoch<T: Real>(
        &self,
        model: &mut Model<T>,
        velocity: &mut Parameters<T>,
        epoch: usize,
        lambdas: &[Option<f64>],
    ) -> Result<f64> {
        model.config = lambdas_for(model, lambdas)?;
        let root = RngStream::new(self.cfg.seed, 0);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut root.fork_path(&[SHUFFLE_STREAM, epoch as u64]));
        let lr = self.cfg.learning_rate * self.cfg.lr_decay.powi(epoch as i32);
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let stream = root.fork_path(&[BATCH_STREAM, epoch as u64, b as u64]);
            let (loss, grads) =
                batch_gradient(model, self.data, batch, self.cfg.loss, self.cfg.augment, &stream, self.cfg.execution)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss });
            }
            total += loss * batch.len() as f64;
            sgd_step(&mut model.params, &grads, velocity, lr, self.cfg.momentum)?;
        }
        if !model.params.all_finite() {
            return Err(Error::Divergence { epoch: epoch + 1, loss: f64::NAN });
        }
        Ok(total / self.data.len() as f64)
    }
}

fn check_inputs(model: &Model<impl Real>, data: &Dataset, cfg: &SgdConfig, schedule: &LambdaSchedule) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no training examples".into()));
    }
    if data.image_shape() != model.config.input {
        return Err(Error::dim(format!(
            "images {:?}, model expects {:?}",
            data.image_shape(),
            model.config.input
        )));
    }
    if data.classes() != model.config.classes() {
        return Err(Error::Label(format!(
            "dataset has {} classes, model {}",
            data.classes(),
            model.config.classes()
        )));
    }
    if schedule.initial.len() != model.config.hidden().len() {
        return Err(Error::Config(format!(
            "schedule covers {} layers, model has {}",
            schedule.initial.len(),
            model.config.hidden().len()
        )));
    }
    Ok(())
}

/// Trains until validation error has not improved for `cfg.patience`
/// consecutive epochs or `cfg.epochs_max` is reached. Returns the model of
/// the best validation epoch (before weight halving).
pub fn train<T: Real>(
    model: &Model<T>,
    train: &Dataset,
    valid: &Dataset,
    cfg: &SgdConfig,
    schedule: &LambdaSchedule,
) -> Result<(Model<T>, History)> {
    check_inputs(model, train, cfg, schedule)?;
    if valid.is_empty() {
        return Err(Error::EmptyDataset("no validation examples".into()));
    }
    if valid.image_shape() != train.image_shape() || valid.classes() != train.classes() {
        return Err(Error::dim("validation set does not match the training set"));
    }
    let run = Run { data: train, cfg };
    let mut current = model.clone();
    let mut velocity = model.params.zeros_like();
    let mut best = model.clone();
    let mut best_error = f64::INFINITY;
    let mut history = History::default();
    let mut stale = 0;
    let averaging = AveragingConfig {
        execution: cfg.execution,
        ..AveragingConfig::sample(cfg.valid_evaluations, RngStream::new(cfg.seed, VALID_STREAM).next_u64())
    };
    for epoch in 0..cfg.epochs_max {
        let lambdas = schedule.lambda_at(epoch.min(schedule.epochs_total))?;
        let loss = run.epoch(&mut current, &mut velocity, epoch, &lambdas)?;
        let err = classification_error(&current.halve_weights(), valid, &averaging)?;
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            lambdas,
            train_loss: loss,
            valid_error: Some(err),
        });
        history.epochs_run = epoch + 1;
        if err < best_error {
            best_error = err;
            best = current.clone();
            history.best_epoch = epoch + 1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

/// Fresh training for exactly `epochs` epochs with no validation and no
/// early stop. Returns the final model.
pub fn retrain_full<T: Real>(
    model: &Model<T>,
    data: &Dataset,
    epochs: usize,
    cfg: &SgdConfig,
    schedule: &LambdaSchedule,
) -> Result<(Model<T>, History)> {
    check_inputs(model, data, cfg, schedule)?;
    let run = Run { data, cfg };
    let mut current = model.clone();
    let mut velocity = model.params.zeros_like();
    let mut history = History::default();
    for epoch in 0..epochs {
        let lambdas = schedule.lambda_at(epoch.min(schedule.epochs_total))?;
        let loss = run.epoch(&mut current, &mut velocity, epoch, &lambdas)?;
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            lambdas,
            train_loss: loss,
            valid_error: None,
        });
    }
    history.epochs_run = epochs;
    history.best_epoch = epochs;
    Ok((current, history))
}
