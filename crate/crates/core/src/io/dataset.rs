use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{Real, RngStream, Tensor};

use rand_distr::{Distribution, Normal};

/// Labelled images stored as `[n, c, h, w]` in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::dim(format!("dataset images must be [n,c,h,w], got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[c, h, w]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn pixels(&self) -> &[f32] {
        self.images.data()
    }

    pub fn image_pixels(&self, i: usize) -> &[f32] {
        let d = self.image_len();
        &self.images.data()[i * d..(i + 1) * d]
    }

    pub fn image<T: Real>(&self, i: usize) -> Tensor<T> {
        let data = self.image_pixels(i).iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::new(self.image_shape().to_vec(), data).expect("image shape is consistent")
    }

    /// Same labels with every image replaced through `f`.
    pub fn map_images(&self, f: impl Fn(&[f32], &mut [f32])) -> Self {
        let d = self.image_len();
        let mut out = self.images.clone();
        for (src, dst) in self.images.data().chunks_exact(d).zip(out.data_mut().chunks_exact_mut(d)) {
            f(src, dst);
        }
        Self {
            images: out,
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        let d = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Range(format!("index {i} outside dataset of {}", self.len())));
            }
            data.extend_from_slice(self.image_pixels(i));
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.image_shape();
        Self::new(Tensor::new(vec![indices.len(), c, h, w], data)?, labels, self.classes)
    }

    /// First `n` examples and the rest.
    pub fn split(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Range(format!("split point {n} for {} examples", self.len())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::EmptyDataset("nothing to concatenate".into()))?;
        let [c, h, w] = first.image_shape();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.image_shape() != first.image_shape() || p.classes != first.classes {
                return Err(Error::dim("datasets disagree on image shape or class count"));
            }
            data.extend_from_slice(p.pixels());
            labels.extend_from_slice(&p.labels);
        }
        Self::new(Tensor::new(vec![labels.len(), c, h, w], data)?, labels, first.classes)
    }
}

/// Bytes per CIFAR-10 record: one label byte and 3x32x32 channel-major pixels.
pub const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;

/// Decodes one CIFAR-10 binary batch file, scaling pixels to `[0, 1]`.
pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_cifar10(&std::fs::read(path)?)
}

pub fn decode_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::EmptyDataset("CIFAR-10 file has no records".into()));
    }
    if bytes.len() % CIFAR10_RECORD != 0 {
        return Err(Error::Format(format!(
            "truncated CIFAR-10 file: {} bytes is not a multiple of {CIFAR10_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR10_RECORD - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::Label(format!("record {i} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10)
}

/// Loads several batch files (read concurrently), concatenated in the given order.
pub fn load_cifar10_files(paths: &[PathBuf], exec: Execution) -> Result<Dataset> {
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(Error::MissingFile(missing.clone()));
    }
    let parts = exec.try_map(paths.len(), |i| load_cifar10_binary(&paths[i]))?;
    Dataset::concat(&parts)
}

/// Training and test files of the standard CIFAR-10 binary distribution.
pub fn cifar10_paths(dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    let train = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    (train, dir.join("test_batch.bin"))
}

/// Parameters of the synthetic blob-image task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    /// `[c, h, w]`.
    pub shape: [usize; 3],
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Each example's prototype is shifted by up to this many pixels per axis.
    pub max_shift: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            shape: [3, 16, 16],
            noise: 0.3,
            max_shift: 2,
            seed,
        }
    }
}

/// Class prototypes made of coloured Gaussian blobs, plus per-example shift
/// and noise. Labels cycle `0, 1, ..., C-1, 0, ...`, so every prefix split is
/// near balanced and the full set is exactly balanced.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let [c, h, w] = spec.shape;
    if spec.classes == 0 || spec.per_class == 0 || c * h * w == 0 {
        return Err(Error::Config("synthetic sizes must be >= 1".into()));
    }
    if spec.max_shift >= h.min(w) {
        return Err(Error::Config("synthetic shift must be smaller than the image".into()));
    }
    let root = RngStream::new(spec.seed, 0);
    let prototypes = (0..spec.classes)
        .map(|k| blob_prototype(spec.shape, &mut root.fork_path(&[0, k as u64])))
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        let mut rng = root.fork_path(&[1, i as u64]);
        let s = spec.max_shift as i64;
        let (dy, dx) = if s > 0 {
            (
                (rng.next_below(2 * s as u64 + 1) as i64 - s) as isize,
                (rng.next_below(2 * s as u64 + 1) as i64 - s) as isize,
            )
        } else {
            (0, 0)
        };
        let img = crate::imageops::shift(&prototypes[label], dy, dx)?;
        data.extend(img.data().iter().map(|&v| {
            let e = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (v + e) as f32
        }));
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, c, h, w], data)?, labels, spec.classes)
}

/// Noise-free, unshifted prototype of each class, as used by [`make_synthetic`].
pub fn synthetic_prototypes(spec: &SyntheticSpec) -> Result<Vec<Tensor<f64>>> {
    let root = RngStream::new(spec.seed, 0);
    (0..spec.classes)
        .map(|k| blob_prototype(spec.shape, &mut root.fork_path(&[0, k as u64])))
        .collect()
}

fn blob_prototype(shape: [usize; 3], rng: &mut RngStream) -> Result<Tensor<f64>> {
    let [c, h, w] = shape;
    let mut img = vec![0.0; c * h * w];
    for _ in 0..3 {
        let cy = rng.uniform() * (h as f64 - 1.0);
        let cx = rng.uniform() * (w as f64 - 1.0);
        let sigma = 1.0 + rng.uniform() * h as f64 / 6.0;
        let colour: Vec<f64> = (0..c).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        for (ch, &a) in colour.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    img[(ch * h + y) * w + x] += a * (-r2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), img)
}
