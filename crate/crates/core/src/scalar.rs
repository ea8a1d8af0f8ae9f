use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst};

/// Floating point element type. Implemented for `f32` (training and
/// inference) and `f64` (gradient verification).
pub trait Real: Float + FloatConst + Default + Debug + Display + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Send + Sync + 'static {
    fn erf(self) -> Self;
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// Numerically stable `1 / (1 + exp(-x))`.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// `ln(1 + exp(x))` without overflow.
    fn softplus(self) -> Self {
        if self > Self::of(30.0) {
            self
        } else if self < Self::of(-30.0) {
            self.exp()
        } else {
            self.exp().ln_1p()
        }
    }
}

impl Real for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}
