//! Three-vectors and line elements.
//!
//! Lengths are measured in units of the cell base side; since the speed is
//! fixed to one, elapsed time equals arc length.

use crate::real::Real;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Three-vector over a kernel scalar; [`Vec3`] is the everyday `f64` version.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct V3<R> {
    pub x: R,
    pub y: R,
    pub z: R,
}

pub type Vec3 = V3<f64>;

impl Vec3 {
    pub const ZERO: Vec3 = V3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = V3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = V3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = V3 { x: 0.0, y: 0.0, z: 1.0 };

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl<R: Real> V3<R> {
    #[inline]
    pub const fn new(x: R, y: R, z: R) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn from_f64(v: Vec3) -> Self {
        Self::new(R::from_f64(v.x), R::from_f64(v.y), R::from_f64(v.z))
    }

    #[inline]
    pub fn to_f64(self) -> Vec3 {
        V3::new(self.x.to_f64(), self.y.to_f64(), self.z.to_f64())
    }

    #[inline]
    pub fn dot(self, o: Self) -> R {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> R {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> R {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction. Zero stays zero.
    #[inline]
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > R::zero() {
            self / n
        } else {
            self
        }
    }

    /// Component orthogonal to the unit vector `u`.
    #[inline]
    pub fn reject(self, u: Self) -> Self {
        self - u * self.dot(u)
    }

    /// Some unit vector orthogonal to `self` (assumed unit).
    pub fn any_orthonormal(self) -> Self {
        let (o, l) = (R::from_f64(1.0), R::zero());
        let bound = R::from_f64(0.6);
        let a = if self.x.abs() < bound {
            Self::new(o, l, l)
        } else if self.y.abs() < bound {
            Self::new(l, o, l)
        } else {
            Self::new(l, l, o)
        };
        a.reject(self).normalized()
    }
}

impl<R: Real> Add for V3<R> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<R: Real> AddAssign for V3<R> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<R: Real> Sub for V3<R> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<R: Real> SubAssign for V3<R> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<R: Real> Mul<R> for V3<R> {
    type Output = Self;
    #[inline]
    fn mul(self, s: R) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl<R: Real> Div<R> for V3<R> {
    type Output = Self;
    #[inline]
    fn div(self, s: R) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<R: Real> Neg for V3<R> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// A position-velocity pair with unit speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line<R> {
    pub q: V3<R>,
    pub v: V3<R>,
}

pub type LineElement = Line<f64>;

impl LineElement {
    /// Finite components and |v| = 1 within `1e-12`.
    pub fn is_valid(&self) -> bool {
        self.q.is_finite() && self.v.is_finite() && (self.v.norm() - 1.0).abs() <= 1e-12
    }
}

impl<R: Real> Line<R> {
    pub fn new(q: V3<R>, v: V3<R>) -> Self {
        Self { q, v }
    }

    #[inline]
    pub fn at(&self, t: R) -> V3<R> {
        self.q + self.v * t
    }

    pub fn from_f64(x: &LineElement) -> Self {
        Self::new(V3::from_f64(x.q), V3::from_f64(x.v))
    }

    pub fn to_f64(&self) -> LineElement {
        Line::new(self.q.to_f64(), self.v.to_f64())
    }
}
