//! Contrast normalisation, ZCA whitening and training-time augmentation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops;
use crate::numerics::{Real, RngStream, Tensor};

use super::Dataset;

pub const DEFAULT_CONTRAST_SCALE: f64 = 55.0;
pub const DEFAULT_CONTRAST_EPS: f64 = 1e-8;
pub const DEFAULT_ZCA_EPS: f64 = 1e-5;

/// Per image: subtract the mean, divide by `max(std, eps)`, multiply by `scale`.
pub fn contrast_normalize(images: &Dataset, scale: f64, eps: f64) -> Dataset {
    images.map_images(|src, dst| {
        let n = src.len() as f64;
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let denom = var.sqrt().max(eps);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = ((s as f64 - mean) / denom * scale) as f32;
        }
    })
}

/// Whitening transform fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Zca {
    pub mean: Vec<f64>,
    /// `U diag(1 / sqrt(s + eps)) U^T`, symmetric.
    pub matrix: DMatrix<f64>,
    pub eps: f64,
}

/// Fits ZCA on flattened training images (covariance normalised by `n`).
pub fn zca_fit(train: &Dataset, eps: f64) -> Result<Zca> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("cannot fit ZCA on no images".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::Range(format!("ZCA eps must be >= 0, got {eps}")));
    }
    let (n, d) = (train.len(), train.image_len());
    let x = DMatrix::from_row_iterator(n, d, train.pixels().iter().map(|&v| v as f64));
    let mean: Vec<f64> = x.row_mean().iter().copied().collect();
    let mut centred = x;
    for mut row in centred.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = (centred.transpose() * &centred) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let scale = eig.eigenvalues.map(|s| 1.0 / (s.max(0.0) + eps).sqrt());
    if scale.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("singular covariance with eps = 0".into()));
    }
    let u = &eig.eigenvectors;
    let mut matrix = u * DMatrix::from_diagonal(&scale) * u.transpose();
    // Symmetrise away rounding in the triple product.
    let t = matrix.transpose();
    matrix = (matrix + t) * 0.5;
    Ok(Zca { mean, matrix, eps })
}

pub fn zca_apply(model: &Zca, images: &Dataset) -> Result<Dataset> {
    let d = images.image_len();
    if d != model.mean.len() {
        return Err(Error::dim(format!("ZCA fitted on {} dims, images have {d}", model.mean.len())));
    }
    Ok(images.map_images(|src, dst| {
        let centred = nalgebra::DVector::from_iterator(d, src.iter().zip(&model.mean).map(|(&v, m)| v as f64 - m));
        let out = &model.matrix * centred;
        for (o, v) in dst.iter_mut().zip(out.iter()) {
            *o = *v as f32;
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastSettings {
    pub scale: f64,
    pub eps: f64,
}

/// Preprocessing pipeline: optional contrast normalisation then optional
/// ZCA. Statistics come from the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessModel {
    pub contrast: Option<ContrastSettings>,
    pub zca_eps: Option<f64>,
    fitted: Option<Option<Zca>>,
}

impl PreprocessModel {
    pub fn new(contrast: Option<ContrastSettings>, zca_eps: Option<f64>) -> Self {
        Self {
            contrast,
            zca_eps,
            fitted: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(None, None)
    }

    pub fn fit(&mut self, train: &Dataset) -> Result<()> {
        let zca = match self.zca_eps {
            Some(eps) => {
                let normalised = self.contrast_only(train);
                Some(zca_fit(&normalised, eps)?)
            }
            None => None,
        };
        self.fitted = Some(zca);
        Ok(())
    }

    pub fn zca(&self) -> Option<&Zca> {
        self.fitted.as_ref().and_then(Option::as_ref)
    }

    fn contrast_only(&self, ds: &Dataset) -> Dataset {
        match self.contrast {
            Some(c) => contrast_normalize(ds, c.scale, c.eps),
            None => ds.clone(),
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let zca = self.fitted.as_ref().ok_or(Error::NotFitted)?;
        let out = self.contrast_only(ds);
        match zca {
            Some(z) => zca_apply(z, &out),
            None => Ok(out),
        }
    }
}

/// Random translation within `[-max_shift, max_shift]` on both axes (zero
/// fill) and, when `flip` is set, a horizontal flip with probability 0.5.
pub fn augment_image<T: Real>(
    img: &Tensor<T>,
    rng: &mut RngStream,
    max_shift: usize,
    flip: bool,
) -> Result<Tensor<T>> {
    let width = img.shape().get(2).copied().unwrap_or(0);
    if max_shift >= width.max(1) {
        return Err(Error::Range(format!("max shift {max_shift} must be below width {width}")));
    }
    let mut out = if max_shift > 0 {
        let span = 2 * max_shift as u64 + 1;
        let dy = rng.next_below(span) as isize - max_shift as isize;
        let dx = rng.next_below(span) as isize - max_shift as isize;
        imageops::shift(img, dy, dx)?
    } else {
        img.clone()
    };
    if flip && rng.uniform() < 0.5 {
        out = imageops::hflip(&out)?;
    }
    Ok(out)
}

/// Augments every image of a dataset with stream `rng.fork(i)` for example `i`.
pub fn augment(images: &Dataset, rng: &RngStream, max_shift: usize, flip: bool) -> Result<Dataset> {
    let [c, h, w] = images.image_shape();
    let mut data = Vec::with_capacity(images.pixels().len());
    for i in 0..images.len() {
        let img = augment_image(&images.image::<f32>(i), &mut rng.fork(i as u64), max_shift, flip)?;
        data.extend_from_slice(img.data());
    }
    Dataset::new(
        Tensor::new(vec![images.len(), c, h, w], data)?,
        images.labels().to_vec(),
        images.classes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::dataset::{make_synthetic, SyntheticSpec};

    fn small() -> Dataset {
        make_synthetic(&SyntheticSpec {
            shape: [1, 4, 4],
            ..SyntheticSpec::new(3, 60, 5)
        })
        .unwrap()
    }

    #[test]
    fn contrast_normalisation_statistics() {
        let ds = contrast_normalize(&small(), 2.0, 1e-8);
        for i in 0..ds.len() {
            let px: Vec<f64> = ds.image_pixels(i).iter().map(|&v| v as f64).collect();
            let n = px.len() as f64;
            let mean = px.iter().sum::<f64>() / n;
            let std = (px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-6);
            assert!((std - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_image_normalises_to_zero() {
        let ds = Dataset::new(Tensor::filled(vec![1, 1, 3, 3], 0.7f32), vec![0], 1).unwrap();
        let out = contrast_normalize(&ds, 55.0, 1e-8);
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let ds = small();
        let zca = zca_fit(&ds, 1e-5).unwrap();
        let t = &zca.matrix;
        assert!((t - t.transpose()).abs().max() < 1e-8);
        let white = zca_apply(&zca, &ds).unwrap();
        let d = white.image_len();
        let x = DMatrix::from_row_iterator(white.len(), d, white.pixels().iter().map(|&v| v as f64));
        let mean = x.row_mean();
        let mut c = x.clone();
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        let cov = (c.transpose() * &c) / white.len() as f64;
        let rel = (cov - DMatrix::<f64>::identity(d, d)).norm() / (d as f64).sqrt();
        assert!(rel < 1e-3, "relative Frobenius error {rel}");
    }

    #[test]
    fn white_data_gives_identity_transform() {
        // Rows are +-1 patterns whose covariance is exactly the identity.
        let rows = [[1., 1., 1.], [1., -1., -1.], [-1., 1., -1.], [-1., -1., 1.]];
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
        let ds = Dataset::new(Tensor::new(vec![4, 3, 1, 1], data).unwrap(), vec![0; 4], 1).unwrap();
        let zca = zca_fit(&ds, 0.0).unwrap();
        assert!((zca.matrix.clone() - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-9);
    }

    #[test]
    fn pipeline_requires_fit_and_is_split_local() {
        let ds = small();
        let (train, test) = ds.split(120).unwrap();
        let mut pre = PreprocessModel::new(Some(ContrastSettings { scale: 1.0, eps: 1e-8 }), Some(1e-5));
        assert!(matches!(pre.apply(&test), Err(Error::NotFitted)));
        pre.fit(&train).unwrap();
        let mut again = pre.clone();
        again.fit(&train).unwrap();
        assert_eq!(pre.apply(&test).unwrap(), again.apply(&test).unwrap());
        let mut leaky = pre.clone();
        leaky.fit(&ds).unwrap();
        assert_ne!(leaky.zca().unwrap().mean, pre.zca().unwrap().mean);
    }

    #[test]
    fn augmentation_contracts() {
        let ds = small();
        let rng = RngStream::new(3, 0);
        assert_eq!(augment(&ds, &rng, 0, false).unwrap(), ds);
        assert_eq!(augment(&ds, &rng, 2, true).unwrap(), augment(&ds, &rng, 2, true).unwrap());
        assert_ne!(augment(&ds, &rng, 2, true).unwrap(), ds);
        let img = ds.image::<f64>(0);
        let twice = imageops::hflip(&imageops::hflip(&img).unwrap()).unwrap();
        assert_eq!(twice, img);
        assert!(augment_image(&img, &mut rng.clone(), 4, false).is_err());
    }
}
