//! Valid (unpadded, stride 1) cross-correlation via im2col.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub(crate) struct ConvDims {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub rf: usize,
    pub cout: usize,
}

impl ConvDims {
    pub fn ho(&self) -> usize {
        self.h - self.rf + 1
    }
    pub fn wo(&self) -> usize {
        self.w - self.rf + 1
    }
    pub fn patch(&self) -> usize {
        self.cin * self.rf * self.rf
    }
}

fn dims<T: Real>(input: &Tensor<T>, filters: &Tensor<T>) -> Result<ConvDims> {
    let (is, fs) = (input.shape(), filters.shape());
    if is.len() != 3 || fs.len() != 4 {
        return Err(Error::dim(format!(
            "conv expects input [c,h,w] and filters [cout,cin,rf,rf], got {is:?} and {fs:?}"
        )));
    }
    let d = ConvDims {
        cin: is[0],
        h: is[1],
        w: is[2],
        rf: fs[2],
        cout: fs[0],
    };
    if fs[1] != d.cin || fs[3] != d.rf {
        return Err(Error::dim(format!("filters {fs:?} do not match input {is:?}")));
    }
    if d.h < d.rf || d.w < d.rf {
        return Err(Error::dim(format!(
            "input {}x{} smaller than receptive field {}",
            d.h, d.w, d.rf
        )));
    }
    Ok(d)
}

/// Unfolds every `rf x rf` patch into a column: `[cin*rf*rf, ho*wo]`.
pub(crate) fn im2col<T: Real>(input: &[T], d: &ConvDims) -> Vec<T> {
    let (ho, wo, rf) = (d.ho(), d.wo(), d.rf);
    let p = ho * wo;
    let mut cols = vec![T::zero(); d.patch() * p];
    for c in 0..d.cin {
        for ky in 0..rf {
            for kx in 0..rf {
                let row = (c * rf + ky) * rf + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let src = &input[(c * d.h + oy + ky) * d.w + kx..][..wo];
                    dst[oy * wo..(oy + 1) * wo].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], d: &ConvDims, out: &mut [T]) {
    let (ho, wo, rf) = (d.ho(), d.wo(), d.rf);
    let p = ho * wo;
    for c in 0..d.cin {
        for ky in 0..rf {
            for kx in 0..rf {
                let row = (c * rf + ky) * rf + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let dst = &mut out[(c * d.h + oy + ky) * d.w + kx..][..wo];
                    for (o, &s) in dst.iter_mut().zip(&src[oy * wo..(oy + 1) * wo]) {
                        *o = *o + s;
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Valid cross-correlation: `[cin,h,w] -> [cout, h-rf+1, w-rf+1]`.
pub fn conv_forward<T: Real>(input: &Tensor<T>, filters: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let d = dims(input, filters)?;
    if bias.len() != d.cout {
        return Err(Error::dim(format!("{} biases for {} filters", bias.len(), d.cout)));
    }
    let cols = im2col(input.data(), &d);
    let (p, patch) = (d.ho() * d.wo(), d.patch());
    let mut out = vec![T::zero(); d.cout * p];
    for (co, (orow, wrow)) in out
        .chunks_exact_mut(p)
        .zip(filters.data().chunks_exact(patch))
        .enumerate()
    {
        orow.fill(bias[co]);
        for (r, &wv) in wrow.iter().enumerate() {
            axpy(wv, &cols[r * p..(r + 1) * p], orow);
        }
    }
    Tensor::new(vec![d.cout, d.ho(), d.wo()], out)
}

/// Gradients of a convolution given `grad_out` of shape `[cout, ho, wo]`.
///
/// Returns `(d_filters, d_bias, d_input)`; `d_input` is skipped when not needed.
pub(crate) fn conv_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &[T],
    need_input_grad: bool,
) -> Result<(Vec<T>, Vec<T>, Option<Vec<T>>)> {
    let d = dims(input, filters)?;
    let (p, patch) = (d.ho() * d.wo(), d.patch());
    if grad_out.len() != d.cout * p {
        return Err(Error::dim("conv gradient does not match output shape"));
    }
    let cols = im2col(input.data(), &d);
    let mut dw = vec![T::zero(); d.cout * patch];
    let mut db = vec![T::zero(); d.cout];
    for co in 0..d.cout {
        let g = &grad_out[co * p..(co + 1) * p];
        db[co] = g.iter().copied().sum();
        for r in 0..patch {
            dw[co * patch + r] = crate::numerics::tensor_dot(g, &cols[r * p..(r + 1) * p]);
        }
    }
    let dx = if need_input_grad {
        let mut dcols = vec![T::zero(); patch * p];
        for co in 0..d.cout {
            let g = &grad_out[co * p..(co + 1) * p];
            let wrow = &filters.data()[co * patch..(co + 1) * patch];
            for (r, &wv) in wrow.iter().enumerate() {
                axpy(wv, g, &mut dcols[r * p..(r + 1) * p]);
            }
        }
        let mut dx = vec![T::zero(); input.len()];
        col2im_add(&dcols, &d, &mut dx);
        Some(dx)
    } else {
        None
    };
    Ok((dw, db, dx))
}
