//! Test-time prediction: E-sample model averaging and the two deterministic
//! ablations (max at test, probability weighting at test).
//!
//! Every function here expects a model that has already been through
//! [`Model::halve_weights`] once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io::Dataset;
use crate::network::Model;
use crate::numerics::{Real, RngStream, Tensor};
use crate::subspace::SamplingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    SampleAverage,
    MaxAtTest,
    ProbWeightAtTest,
}

impl AveragingMode {
    pub fn label(self) -> &'static str {
        match self {
            AveragingMode::SampleAverage => "sample-average",
            AveragingMode::MaxAtTest => "max-at-test",
            AveragingMode::ProbWeightAtTest => "prob-weight-at-test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingConfig {
    /// Number of sampled instantiations averaged per example (E).
    pub evaluations: usize,
    pub seed: u64,
    pub mode: AveragingMode,
    pub execution: Execution,
}

impl AveragingConfig {
    pub fn sample(evaluations: usize, seed: u64) -> Self {
        Self {
            evaluations,
            seed,
            mode: AveragingMode::SampleAverage,
            execution: Execution::default(),
        }
    }

    pub fn deterministic(mode: AveragingMode) -> Self {
        Self {
            evaluations: 1,
            seed: 0,
            mode,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Averaged class probabilities.
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    (1..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

/// Averages the softmax outputs of `evaluations` sampled passes. Pass `e`
/// draws from `rng.fork(e)`.
pub fn predict<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    evaluations: usize,
    rng: &RngStream,
) -> Result<Prediction> {
    if evaluations == 0 {
        return Err(Error::Range("model averaging needs E >= 1".into()));
    }
    let mut sum = vec![0.0; model.config.classes()];
    for e in 0..evaluations {
        let pass = model.forward(x, SamplingMode::InferSample, &mut rng.fork(e as u64), false)?;
        for (s, p) in sum.iter_mut().zip(&pass.probs) {
            *s += p.as_f64();
        }
    }
    let probs: Vec<f64> = sum.into_iter().map(|s| s / evaluations as f64).collect();
    let label = argmax(&probs);
    Ok(Prediction { probs, label })
}

/// One deterministic pass with maximum or probability-weighted probout units.
pub fn predict_deterministic<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    mode: AveragingMode,
) -> Result<Prediction> {
    let sampling = match mode {
        AveragingMode::MaxAtTest => SamplingMode::InferMax,
        AveragingMode::ProbWeightAtTest => SamplingMode::InferProbWeight,
        AveragingMode::SampleAverage => {
            return Err(Error::Mode("sample averaging is not deterministic".into()))
        }
    };
    // Deterministic modes never draw from the stream.
    let pass = model.forward(x, sampling, &mut RngStream::new(0, 0), false)?;
    let probs: Vec<f64> = pass.probs.iter().map(|p| p.as_f64()).collect();
    let label = argmax(&probs);
    Ok(Prediction { probs, label })
}

/// Prediction for example `index` of a dataset under `cfg`; the sampling
/// stream is `(cfg.seed, index)`.
pub fn classify<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    index: usize,
    cfg: &AveragingConfig,
) -> Result<Prediction> {
    match cfg.mode {
        AveragingMode::SampleAverage => {
            let rng = RngStream::new(cfg.seed, 0).fork(index as u64);
            predict(model, x, cfg.evaluations, &rng)
        }
        mode => predict_deterministic(model, x, mode),
    }
}

/// Percentage of misclassified examples.
pub fn classification_error<T: Real>(model: &Model<T>, data: &Dataset, cfg: &AveragingConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("classification error of no examples".into()));
    }
    let wrong = cfg.execution.try_map(data.len(), |i| {
        classify(model, &data.image::<T>(i), i, cfg).map(|p| p.label != data.labels()[i])
    })?;
    Ok(100.0 * wrong.iter().filter(|&&w| w).count() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub evaluations: usize,
    pub mean_error: f64,
    /// Sample standard deviation over the repeats.
    pub std_error: f64,
}

/// Error as a function of E, measured `repeats` times per E with seeds
/// `seed, seed + 1, ...`.
pub fn averaging_curve<T: Real>(
    model: &Model<T>,
    data: &Dataset,
    evaluation_counts: &[usize],
    repeats: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<CurveRow>> {
    if evaluation_counts.is_empty() || repeats == 0 {
        return Err(Error::Config("averaging curve needs at least one E and one repeat".into()));
    }
    evaluation_counts
        .iter()
        .map(|&e| {
            let errors = (0..repeats)
                .map(|r| {
                    let cfg = AveragingConfig {
                        evaluations: e,
                        seed: seed.wrapping_add(r as u64),
                        mode: AveragingMode::SampleAverage,
                        execution,
                    };
                    classification_error(model, data, &cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&errors);
            Ok(CurveRow {
                evaluations: e,
                mean_error: mean,
                std_error: std,
            })
        })
        .collect()
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
