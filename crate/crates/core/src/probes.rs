//! Invariance curves, filter grids and sampling diagnostics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::imageops;
use crate::io::{csv_string, fmt_f64, PnmImage};
use crate::network::{LayerSpec, Model};
use crate::numerics::{Real, RngStream, Tensor};
use crate::subspace::{
    boltzmann_probs, dropout_probs, probout_select, Choice, ProboutConfig, SamplingMode, SubspaceActivations,
};

/// Vertical shift with zero fill; rows that stay in frame are copied exactly.
pub fn translate_image<T: Real>(img: &Tensor<T>, dy: isize) -> Result<Tensor<T>> {
    imageops::shift(img, dy, 0)
}

/// Rotation about the image centre, bilinear, zero fill.
pub fn rotate_image<T: Real>(img: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    imageops::rotate(img, degrees)
}

/// Euclidean distance between the unit-L2 versions of two feature tensors.
/// A zero vector stays zero; two zero vectors are at distance 0.
pub fn feature_distance<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>) -> Result<f64> {
    f1.check_same_shape(f2)?;
    let unit = |t: &Tensor<T>| -> Vec<f64> {
        let v: Vec<f64> = t.data().iter().map(|x| x.as_f64()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter().map(|x| x / norm).collect()
        } else {
            v
        }
    };
    let (a, b) = (unit(f1), unit(f2));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Translate,
    Rotate,
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Translate => "translate",
            Transform::Rotate => "rotate",
        })
    }
}

impl Transform {
    fn apply<T: Real>(self, img: &Tensor<T>, magnitude: f64) -> Result<Tensor<T>> {
        match self {
            Transform::Translate => {
                if magnitude.fract() != 0.0 {
                    return Err(Error::Range(format!("translation {magnitude} is not a whole pixel count")));
                }
                translate_image(img, magnitude as isize)
            }
            Transform::Rotate => rotate_image(img, magnitude),
        }
    }
}

/// Ordered list of (transform, magnitude) probes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sweep {
    pub steps: Vec<(Transform, f64)>,
}

impl Sweep {
    /// Vertical translations `-max..=max` pixels.
    pub fn translations(max: usize) -> Self {
        let m = max as i64;
        Self {
            steps: (-m..=m).map(|d| (Transform::Translate, d as f64)).collect(),
        }
    }

    /// Rotations `0, step, ..., 360` degrees.
    pub fn rotations(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 360.0) {
            return Err(Error::Range(format!("rotation step {step}")));
        }
        let n = (360.0 / step).floor() as usize;
        let mut steps: Vec<(Transform, f64)> = (0..=n).map(|i| (Transform::Rotate, i as f64 * step)).collect();
        if steps.last().map(|s| s.1) != Some(360.0) {
            steps.push((Transform::Rotate, 360.0));
        }
        Ok(Self { steps })
    }

    pub fn then(mut self, other: Sweep) -> Self {
        self.steps.extend(other.steps);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageId {
    Index(usize),
    Mean,
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageId::Index(i) => write!(f, "{i}"),
            ImageId::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub transform: Transform,
    pub magnitude: f64,
    pub layer: String,
    pub image: ImageId,
    pub distance: f64,
}

/// Hidden-layer features of one image under deterministic max selection.
fn features<T: Real>(model: &Model<T>, img: &Tensor<T>, layers: &[usize]) -> Result<Vec<Tensor<T>>> {
    let pass = model.forward(img, SamplingMode::InferMax, &mut RngStream::new(0, 0), true)?;
    layers
        .iter()
        .map(|&l| pass.features(l).cloned().ok_or_else(|| Error::dim(format!("no features for layer {l}"))))
        .collect()
}

/// Normalised feature distance between every image and its transformed
/// versions, per requested hidden layer (by name, e.g. `conv1`; empty means
/// all). Features are taken after spatial pooling with probout units
/// replaced by their maximum, so the curve is deterministic.
///
/// Rows come in (image, step, layer) order, followed by the mean over images
/// for every (step, layer).
pub fn invariance_curve<T: Real>(
    model: &Model<T>,
    images: &[Tensor<T>],
    sweep: &Sweep,
    layers: &[String],
    execution: Execution,
) -> Result<Vec<ProbeRecord>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("invariance probe without images".into()));
    }
    if sweep.steps.is_empty() {
        return Err(Error::Config("empty transform sweep".into()));
    }
    let names = model.config.hidden_names();
    let chosen: Vec<usize> = if layers.is_empty() {
        (0..names.len()).collect()
    } else {
        layers
            .iter()
            .map(|n| {
                names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::Config(format!("unknown layer {n}; model has {names:?}")))
            })
            .collect::<Result<_>>()?
    };
    let per_image = execution.try_map(images.len(), |i| -> Result<Vec<f64>> {
        let base = features(model, &images[i], &chosen)?;
        let mut out = Vec::with_capacity(sweep.steps.len() * chosen.len());
        for &(t, m) in &sweep.steps {
            let moved = features(model, &t.apply(&images[i], m)?, &chosen)?;
            for (a, b) in base.iter().zip(&moved) {
                out.push(feature_distance(a, b)?);
            }
        }
        Ok(out)
    })?;
    let row = |s: usize, li: usize, image: ImageId, distance: f64| ProbeRecord {
        transform: sweep.steps[s].0,
        magnitude: sweep.steps[s].1,
        layer: names[chosen[li]].clone(),
        image,
        distance,
    };
    let width = chosen.len();
    let mut rows = Vec::with_capacity((images.len() + 1) * sweep.steps.len() * width);
    for (i, d) in per_image.iter().enumerate() {
        for s in 0..sweep.steps.len() {
            for li in 0..width {
                rows.push(row(s, li, ImageId::Index(i), d[s * width + li]));
            }
        }
    }
    for s in 0..sweep.steps.len() {
        for li in 0..width {
            let mean = per_image.iter().map(|d| d[s * width + li]).sum::<f64>() / images.len() as f64;
            rows.push(row(s, li, ImageId::Mean, mean));
        }
    }
    Ok(rows)
}

pub const PROBE_COLUMNS: [&str; 5] = ["transform", "magnitude", "layer", "image_id", "distance"];

fn probe_fields(r: &ProbeRecord) -> Vec<String> {
    vec![
        r.transform.to_string(),
        fmt_f64(r.magnitude),
        r.layer.clone(),
        r.image.to_string(),
        fmt_f64(r.distance),
    ]
}

pub fn probe_csv(records: &[ProbeRecord]) -> Result<String> {
    csv_string(&PROBE_COLUMNS, &records.iter().map(probe_fields).collect::<Vec<_>>())
}

/// Several models' curves in one table with a leading `model` column.
pub fn paired_probe_csv(groups: &[(&str, &[ProbeRecord])]) -> Result<String> {
    let mut header = vec!["model"];
    header.extend(PROBE_COLUMNS);
    let rows: Vec<Vec<String>> = groups
        .iter()
        .flat_map(|(name, recs)| {
            recs.iter().map(move |r| {
                let mut row = vec![name.to_string()];
                row.extend(probe_fields(r));
                row
            })
        })
        .collect();
    csv_string(&header, &rows)
}

/// Gray level used for filters with no contrast.
pub const FLAT_FILTER_LEVEL: u8 = 128;

/// Filters of one convolutional layer laid out as a grid of tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrid {
    pub image: PnmImage,
    /// Tile size in pixels.
    pub tile_h: usize,
    pub tile_w: usize,
    /// Black border between tiles.
    pub gap: usize,
    pub units_per_row: usize,
    pub k: usize,
}

impl FilterGrid {
    /// Top-left pixel of filter `j` of `unit`.
    pub fn tile_origin(&self, unit: usize, j: usize) -> (usize, usize) {
        let (row, col) = (unit / self.units_per_row, unit % self.units_per_row);
        let y = self.gap + row * (self.tile_h + self.gap);
        let x = self.gap + (col * self.k + j) * (self.tile_w + self.gap);
        (y, x)
    }
}

/// Each filter scaled independently to `0..=255` (`round(255 (v - min) / (max - min))`).
pub fn normalize_filter(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return vec![FLAT_FILTER_LEVEL; values.len()];
    }
    values.iter().map(|&v| (255.0 * (v - lo) / (hi - lo)).round() as u8).collect()
}

/// Grid of the linear filters of hidden layer `layer`, the `k` filters of a
/// unit side by side. Three-channel inputs give an RGB image; otherwise the
/// input channels of a filter are stacked vertically in a grayscale tile.
pub fn export_filters<T: Real>(model: &Model<T>, layer: usize) -> Result<FilterGrid> {
    let k = match model.config.layers.get(layer) {
        Some(LayerSpec::ConvSubspace { k, .. }) if layer + 1 < model.config.layers.len() => *k,
        _ => return Err(Error::Config(format!("layer {layer} is not a convolutional subspace layer"))),
    };
    let w = &model.params.layers[layer].weight;
    let (filters, cin, rf) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let units = filters / k;
    let rgb = cin == 3;
    let (tile_h, tile_w, channels) = if rgb { (rf, rf, 3) } else { (rf * cin, rf, 1) };
    let gap = 1;
    let units_per_row = (units as f64).sqrt().ceil() as usize;
    let rows = units.div_ceil(units_per_row);
    let width = gap + units_per_row * k * (tile_w + gap);
    let height = gap + rows * (tile_h + gap);
    let name = model.config.hidden_names()[layer].clone();
    let mut grid = FilterGrid {
        image: PnmImage {
            width,
            height,
            channels,
            comments: vec![format!(
                "layer {name}; {units} units x {k} filters side by side; per-filter min-max to 0..255, flat filters at {FLAT_FILTER_LEVEL}"
            )],
            data: vec![0; width * height * channels],
        },
        tile_h,
        tile_w,
        gap,
        units_per_row,
        k,
    };
    let per = cin * rf * rf;
    for f in 0..filters {
        let vals: Vec<f64> = w.data()[f * per..(f + 1) * per].iter().map(|v| v.as_f64()).collect();
        let bytes = normalize_filter(&vals);
        let (oy, ox) = grid.tile_origin(f / k, f % k);
        for c in 0..cin {
            for y in 0..rf {
                for x in 0..rf {
                    let v = bytes[(c * rf + y) * rf + x];
                    let (py, px, pc) = if rgb { (oy + y, ox + x, c) } else { (oy + c * rf + y, ox + x, 0) };
                    grid.image.data[(py * width + px) * channels + pc] = v;
                }
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    /// With dropout, index 0 is the dropped outcome and `i + 1` is unit `i`.
    pub expected: Vec<f64>,
    pub observed: Vec<f64>,
    /// `|observed - expected| / sqrt(p (1 - p) / N)` per outcome (0 when p is 0 or 1 and matched).
    pub deviation_sigma: Vec<f64>,
    pub max_sigma: f64,
    pub passed: bool,
}

/// Largest deviation, in binomial standard errors, that still passes.
pub const SIGMA_LIMIT: f64 = 4.0;

/// Draws `n` probout selections and compares outcome frequencies with the
/// Boltzmann (or dropout-integrated) probabilities.
pub fn sampling_frequency_check(
    z: &[f64],
    lambda: f64,
    n: usize,
    dropout: bool,
    rng: &mut RngStream,
) -> Result<SamplingReport> {
    if n < 1000 {
        return Err(Error::Range(format!("{n} draws; at least 1000 needed")));
    }
    let act = SubspaceActivations::new(z.to_vec())?;
    let (mode, expected) = if dropout {
        (SamplingMode::TrainSampleDropout, dropout_probs(&act, lambda))
    } else {
        (SamplingMode::TrainSample, boltzmann_probs(&act, lambda))
    };
    let cfg = ProboutConfig::new(lambda, mode)?;
    let mut counts = vec![0usize; expected.len()];
    for _ in 0..n {
        let slot = match probout_select(&act, &cfg, rng)?.choice {
            Choice::Unit(i) => i + usize::from(dropout),
            Choice::Dropped => 0,
            Choice::Weighted => unreachable!("sampling modes never weight"),
        };
        counts[slot] += 1;
    }
    let observed: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let deviation_sigma: Vec<f64> = expected
        .iter()
        .zip(&observed)
        .map(|(&p, &f)| {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let d = (f - p).abs();
            if se > 0.0 {
                d / se
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let max_sigma = deviation_sigma.iter().cloned().fold(0.0, f64::max);
    Ok(SamplingReport {
        expected,
        observed,
        deviation_sigma,
        max_sigma,
        passed: max_sigma <= SIGMA_LIMIT,
    })
}

#[cfg(test)]
mod tests;
