//! Scalar abstraction for the collision kernel.
//!
//! The kernel runs in plain `f64` for production work. The double-double type
//! exists for runs that have to survive the exponential amplification of
//! rounding errors along chaotic orbits, e.g. long time-reversal checks.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use twofloat::TwoFloat;

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + 'static
{
    /// Residual at which root polishing stops.
    const POLISH_TOL: f64;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn min(self, o: Self) -> Self {
        if o < self {
            o
        } else {
            self
        }
    }

    #[inline]
    fn max(self, o: Self) -> Self {
        if o > self {
            o
        } else {
            self
        }
    }

    /// `1` for non-negative values, `-1` otherwise.
    #[inline]
    fn sign(self) -> f64 {
        if self < Self::zero() {
            -1.0
        } else {
            1.0
        }
    }

    #[inline]
    fn scale(self, s: f64) -> Self {
        self * Self::from_f64(s)
    }
}

impl Real for f64 {
    const POLISH_TOL: f64 = 1e-14;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

/// Double-double scalar (about 32 significant digits).
///
/// Arithmetic is delegated to `twofloat`, except division: its double-double
/// quotient is only accurate to `f64` precision, so `Dd` divides by long
/// division with three partial quotients instead.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Dd(pub TwoFloat);

impl Dd {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, o: Dd) -> Dd {
        Dd(self.0 + o.0)
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, o: Dd) -> Dd {
        Dd(self.0 - o.0)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, o: Dd) -> Dd {
        Dd(self.0 * o.0)
    }
}

impl Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, o: Dd) -> Dd {
        let b = o.0;
        let q1 = self.0.hi() / b.hi();
        let r = self.0 - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        Dd(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

impl AddAssign for Dd {
    #[inline]
    fn add_assign(&mut self, o: Dd) {
        self.0 += o.0;
    }
}

impl SubAssign for Dd {
    #[inline]
    fn sub_assign(&mut self, o: Dd) {
        self.0 -= o.0;
    }
}

impl Real for Dd {
    const POLISH_TOL: f64 = 1e-29;

    #[inline]
    fn from_f64(x: f64) -> Self {
        Dd(TwoFloat::from(x))
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self.0.hi() + self.0.lo()
    }
    #[inline]
    fn sqrt(self) -> Self {
        if self.0.hi() <= 0.0 {
            return Dd::from_f64(0.0);
        }
        // one Newton step on the f64 root
        let s = self.0.hi().sqrt();
        let r = self.0 - TwoFloat::new_mul(s, s);
        Dd(TwoFloat::new_add(s, r.hi() / (2.0 * s)) + (r.lo() / (2.0 * s)))
    }
    #[inline]
    fn abs(self) -> Self {
        Dd(self.0.abs())
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        Dd(self.0 * s)
    }
}

/// Compensated (Kahan) running sum.
#[derive(Debug, Clone, Copy)]
pub struct KahanSum<R> {
    sum: R,
    comp: R,
}

impl<R: Real> KahanSum<R> {
    pub fn new(start: R) -> Self {
        Self { sum: start, comp: R::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: R) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> R {
        self.sum
    }
}
