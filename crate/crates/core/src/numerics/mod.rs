//! Dense tensors, the scalar abstraction, and reproducible random streams.

mod rng;
mod sampling;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use rng::RngStream;
pub use sampling::{multinomial_draw, PROBABILITY_SUM_TOLERANCE};
pub use tensor::{affine, Tensor};
pub(crate) use tensor::dot as tensor_dot;

/// Scalar type for tensors.
///
/// Training runs in `f32`; gradient checks and probability verification run
/// in `f64`. Every numeric routine is generic over this trait so the
/// precision is chosen once, by the caller's parameter type.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real values convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
