//! Floating-point scalar abstraction shared by the executor, optimizer and
//! image pipeline.
//!
//! Training runs in `f32`; gradient checks need `f64`. Everything numeric in
//! the crate is written once against [`Scalar`].

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    'static
    + Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Send
    + Sync
    + Debug
    + Display
    + LowerExp
{
    /// Name written into binary container manifests.
    const DTYPE: &'static str;
    /// Width in bytes of one serialized element.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from `f64`; panics are impossible for finite input.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<T: Scalar>(v: T) -> T {
        let mut buf = Vec::new();
        v.write_le(&mut buf);
        assert_eq!(buf.len(), T::BYTES);
        T::read_le(&buf)
    }

    #[test]
    fn le_roundtrip_is_exact() {
        assert_eq!(roundtrip(1.5e-7f32), 1.5e-7f32);
        assert_eq!(roundtrip(-3.25e100f64), -3.25e100f64);
        assert_eq!(f32::of(0.25), 0.25);
    }
}
