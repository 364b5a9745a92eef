//! Trainable realization of a [`NetworkSpec`](crate::arch::NetworkSpec):
//! kernels with hand-written backward passes, parameter storage, and Adam.

mod adam;
mod network;
pub mod ops;

pub use adam::Adam;
pub use network::{ConvParams, Network, NnError, Parameters, Tape};

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Element type of network tensors (`f32` for training, `f64` for gradient checks).
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}
