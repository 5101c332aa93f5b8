//! Scalar abstraction for the tensor core.
//!
//! All numeric kernels are generic over [`Scalar`] so the same code runs in
//! f32 or f64. The model and trainer pin f64 (see the aliases in `lib.rs`).

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Copy + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// dtype code in the DTZ tensor format.
    const DTZ_CODE: u8;

    fn from_real(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn to_real(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f64 {
    const DTZ_CODE: u8 = 1;
}

impl Scalar for f32 {
    const DTZ_CODE: u8 = 2;
}
