//! Floating point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the linear algebra, network and loss code.
///
/// Implemented for `f32` and `f64`. The transport LPs are `f64` only.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts a literal or an `f64` intermediate into this scalar.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Machine epsilon scaled tolerance used for "is this zero" checks.
    #[inline]
    fn tiny() -> Self {
        Self::epsilon() * Self::of(16.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
