use crate::error::{Error, Result};

use super::{Real, RngStream};

/// Allowed deviation of a probability vector's sum from one.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Inverse-CDF draw from a categorical distribution; consumes one uniform.
///
/// Mass lost to rounding in the cumulative sum is assigned to the last index.
pub fn multinomial_draw<T: Real>(p: &[T], rng: &mut RngStream) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::Probability("empty probability vector".into()));
    }
    let mut total = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let pi = pi.as_f64();
        if !(pi >= 0.0) {
            return Err(Error::Probability(format!("p[{i}] = {pi} is negative or NaN")));
        }
        total += pi;
    }
    if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(Error::Probability(format!("probabilities sum to {total}")));
    }
    let u = rng.uniform();
    let mut cumulative = 0.0;
    let last = p.len() - 1;
    for (i, &pi) in p[..last].iter().enumerate() {
        cumulative += pi.as_f64();
        if u < cumulative {
            return Ok(i);
        }
    }
    Ok(last)
}
