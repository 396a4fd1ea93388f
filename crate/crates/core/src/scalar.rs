//! Numeric element trait shared by the 32-bit and 64-bit paths.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of tensors and parameter buffers.
///
/// Training runs in `f32`; gradient checking and the high-precision
/// oracles run in `f64`. All numeric code is generic over this trait
/// so both paths share one implementation.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts from `f64`, rounding to the nearest representable value.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    /// Widens to `f64` exactly (both supported types embed in f64).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }

    /// Converts from `usize` without loss at the sizes this crate uses.
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Standard normal draw via Box-Muller. Shared by parameter
/// initialization and the synthetic dataset so both stay exactly
/// reproducible from a seeded stream.
pub(crate) fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}
