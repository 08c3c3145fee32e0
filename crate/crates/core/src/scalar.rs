//! Scalar abstraction shared by the math-heavy modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::ops::DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle<T: Real>(theta: T) -> T {
    let pi = T::PI();
    if theta > -pi && theta <= pi {
        return theta;
    }
    let two_pi = T::two_pi();
    let mut r = (theta + pi) % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    let out = r - pi;
    if out <= -pi {
        out + two_pi
    } else {
        out
    }
}

/// Wrap an angle into `(-π/2, π/2]`, i.e. treat it as an undirected axis.
pub fn normalize_axis<T: Real>(theta: T) -> T {
    let half_pi = T::FRAC_PI_2();
    let pi = T::PI();
    let mut a = normalize_angle(theta);
    if a > half_pi {
        a -= pi;
    } else if a <= -half_pi {
        a += pi;
    }
    a
}
