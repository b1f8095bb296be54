//! Scalar element trait for the tensor engine.
//!
//! Model arithmetic runs in `f32`; the gradient-check suite runs the same
//! code paths in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type usable in tensors and graphs.
pub trait Scalar:
    num_traits::Float + Send + Sync + Debug + Display + Sum + Default + 'static
{
    /// Exact error function (not the tanh approximation).
    fn erf(self) -> Self;

    /// Exponential used inside softmax. For `f32` this is a polynomial
    /// approximation accurate to ~3 ulp; `f64` uses the exact libm path so
    /// gradient checks see full precision.
    fn exp_fast(self) -> Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }

    #[inline]
    fn exp_fast(self) -> Self {
        fast_exp_f32(self)
    }

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }

    #[inline]
    fn exp_fast(self) -> Self {
        self.exp()
    }

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Convert an `f64` literal into the scalar type.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x)
}

/// Fast vectorizable `exp` for `f32`.
///
/// Splits `exp(x) = 2^r * e^f` with `r = round(x / ln 2)` and the residual
/// reduced Cody-Waite style (two-part ln 2) to keep precision at large |x|;
/// `2^r` is assembled through the IEEE-754 exponent field and `e^f` is a
/// degree-7 Taylor polynomial on [-ln2/2, ln2/2]. Max relative error ~8e-8;
/// exact at 0. Inputs beyond [-87.3, 87.3] saturate to the nearest finite
/// endpoint value.
#[inline]
pub fn fast_exp_f32(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;

    let x = x.clamp(-87.3, 87.3);
    let r = (x * std::f32::consts::LOG2_E).round();
    let f = (x - r * LN2_HI) - r * LN2_LO;
    let p = 1.0
        + f * (1.0
            + f * (0.5
                + f * (1.666_666_7e-1
                    + f * (4.166_666_8e-2
                        + f * (8.333_333_3e-3 + f * (1.388_888_9e-3 + f * 1.984_127e-4))))));
    // Safety: the clamp keeps r in [-126, 126], well inside i32 range. The
    // unchecked cast (unlike `as`, which saturates) lets the loop vectorize.
    let ri = unsafe { r.to_int_unchecked::<i32>() };
    let scale = f32::from_bits(((ri + 127) as u32) << 23);
    scale * p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_matches_std_exp() {
        let mut max_rel = 0.0f64;
        let mut x = -87.0f32;
        while x < 80.0 {
            let approx = fast_exp_f32(x) as f64;
            let exact = (x as f64).exp();
            let rel = ((approx - exact) / exact).abs();
            if rel > max_rel {
                max_rel = rel;
            }
            x += 0.0371;
        }
        assert!(max_rel < 5e-7, "max relative error {max_rel}");
    }

    #[test]
    fn fast_exp_exact_at_zero() {
        assert_eq!(fast_exp_f32(0.0), 1.0);
    }

    #[test]
    fn fast_exp_handles_extremes() {
        assert!(fast_exp_f32(-1000.0) < 1e-37);
        assert!(fast_exp_f32(200.0).is_finite());
    }
}
