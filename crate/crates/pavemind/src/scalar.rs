//! Floating-point abstraction shared by the numeric kernels.
//!
//! Every model in this crate (LSTM, regression, Gaussian process, Q-network,
//! value iteration) does plain dense float arithmetic, so the kernels are
//! written once against [`Scalar`] and instantiated at `f32` or `f64`. The
//! pipeline itself always runs at `f64`; see the aliases at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type the numeric kernels are generic over.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + 'static {
    /// Converts an `f64` literal, panicking only for values a float type
    /// cannot represent at all (never the case for the constants used here).
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal not representable in scalar type")
    }

    /// Lossy view as `f64`, used when handing kernel output to the `f64`
    /// pipeline layer and for formatting.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
