//! Scalar abstraction for telemetry readings and policy thresholds.
//!
//! The policy engine and time-series store only need ordered comparison and a
//! finiteness check, so they are generic over [`Reading`]. Floats are the
//! common case; exact rationals are supported for reference computations.

use std::fmt::Debug;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::Float;

/// A value that can be compared against a threshold.
pub trait Reading: Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `false` for NaN and infinities. Exact types are always finite.
    fn is_finite_reading(&self) -> bool;
}

macro_rules! float_reading {
    ($($t:ty),*) => {$(
        impl Reading for $t {
            #[inline]
            fn is_finite_reading(&self) -> bool {
                Float::is_finite(*self)
            }
        }
    )*};
}

float_reading!(f32, f64);

impl<T> Reading for Ratio<T>
where
    T: Integer + Clone + Copy + Debug + Send + Sync + 'static,
{
    #[inline]
    fn is_finite_reading(&self) -> bool {
        true
    }
}
