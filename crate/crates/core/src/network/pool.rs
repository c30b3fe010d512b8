//! Spatial max pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::Config("pool size and stride must be >= 1".into()));
        }
        if extent < self.size {
            return Err(Error::dim(format!(
                "pool window {} larger than input extent {extent}",
                self.size
            )));
        }
        Ok((extent - self.size) / self.stride + 1)
    }
}

/// Max over each window. The second value holds, per output element, the
/// flat index into `input` of the winning element (first in scan order).
pub fn spatial_maxpool<T: Real>(input: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("pool expects [c,h,w], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ho, wo) = (spec.output_extent(h)?, spec.output_extent(w)?);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * spec.stride, ox * spec.stride);
                let mut best = plane + y0 * w + x0;
                for dy in 0..spec.size {
                    for dx in 0..spec.size {
                        let idx = plane + (y0 + dy) * w + x0 + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, arg))
}

/// Output of a pool with recorded winners, reading `input` at those positions.
pub(crate) fn replay_pool<T: Real>(
    input: &Tensor<T>,
    spec: PoolSpec,
    argmax: &[usize],
) -> Result<Tensor<T>> {
    let s = input.shape();
    let shape = vec![s[0], spec.output_extent(s[1])?, spec.output_extent(s[2])?];
    if argmax.len() != shape.iter().product::<usize>() || argmax.iter().any(|&i| i >= input.len()) {
        return Err(Error::dim("stale pooling trace"));
    }
    Tensor::new(shape, argmax.iter().map(|&i| input.data()[i]).collect())
}

/// Scatters pooled gradients back to the winning positions.
pub(crate) fn maxpool_backward<T: Real>(grad_out: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut g = vec![T::zero(); input_len];
    for (&go, &i) in grad_out.iter().zip(argmax) {
        g[i] = g[i] + go;
    }
    g
}
