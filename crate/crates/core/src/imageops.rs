//! Pixel-space transforms on `[c, h, w]` images.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

fn chw<T: Real>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::dim(format!("expected an image [c,h,w], got {s:?}"))),
    }
}

/// Integer shift by `dy` rows and `dx` columns; vacated pixels become zero.
/// Pixels that stay in frame are copied bit-exactly.
pub fn shift<T: Real>(img: &Tensor<T>, dy: isize, dx: isize) -> Result<Tensor<T>> {
    let (c, h, w) = chw(img)?;
    if dy.unsigned_abs() >= h || dx.unsigned_abs() >= w {
        return Err(Error::Range(format!("shift ({dy}, {dx}) leaves nothing of a {h}x{w} image")));
    }
    let mut out = Tensor::zeros(img.shape().to_vec());
    let src = img.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize - dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Ok(out)
}

pub fn hflip<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, w) = chw(img)?;
    let mut out = img.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Rotation by `degrees` (counter-clockwise) about the image centre with
/// bilinear interpolation and zero fill. Multiples of 360 return the input.
pub fn rotate<T: Real>(img: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let (c, h, w) = chw(img)?;
    if !degrees.is_finite() {
        return Err(Error::Range(format!("rotation angle {degrees}")));
    }
    if degrees.rem_euclid(360.0) == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = Tensor::zeros(img.shape().to_vec());
    let dst = out.data_mut();
    let at = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(ch * h + y as usize) * w + x as usize].as_f64()
        }
    };
    for y in 0..h {
        for x in 0..w {
            // Inverse map: output pixel -> source coordinate.
            let (ry, rx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * rx - sin * ry + cx;
            let sy = sin * rx + cos * ry + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(ch, y0 + 1, x0) + fx * at(ch, y0 + 1, x0 + 1));
                dst[(ch * h + y) * w + x] = T::lit(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = RngStream::new(seed, 0);
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = random(2, 5, 6, 1);
        assert_eq!(shift(&img, 0, 0).unwrap(), img);
    }

    #[test]
    fn shift_round_trip_zeroes_boundary() {
        let img = random(1, 6, 4, 2);
        let back = shift(&shift(&img, 2, 0).unwrap(), -2, 0).unwrap();
        for y in 0..6 {
            for x in 0..4 {
                let v = back.data()[y * 4 + x];
                if y >= 4 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v.to_bits(), img.data()[y * 4 + x].to_bits());
                }
            }
        }
        assert!(shift(&img, 6, 0).is_err());
        assert!(shift(&img, 0, -4).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let img = random(3, 4, 5, 3);
        assert_ne!(hflip(&img).unwrap(), img);
        assert_eq!(hflip(&hflip(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn rotation_identities() {
        let img = random(1, 9, 9, 4);
        assert_eq!(rotate(&img, 0.0).unwrap(), img);
        assert_eq!(rotate(&img, 360.0).unwrap(), img);
        // 90 degrees on an odd square grid lands exactly on pixel centres.
        let r = rotate(&img, 90.0).unwrap();
        let r4 = (0..3).fold(r, |acc, _| rotate(&acc, 90.0).unwrap());
        for (a, b) in r4.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn half_turn_twice_restores_image() {
        let img = random(3, 16, 16, 5);
        let back = rotate(&rotate(&img, 180.0).unwrap(), 180.0).unwrap();
        let mse: f64 = back.data().iter().zip(img.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / img.len() as f64;
        assert!(mse.sqrt() < 1e-3, "rms {}", mse.sqrt());
    }
}
