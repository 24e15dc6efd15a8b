//! Small fixed-size vectors for positions, velocities and phase-space points.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// A point or vector in physical 3-space.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn comp(self, d: usize) -> f64 {
        match d {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    #[inline]
    pub fn set_comp(&mut self, d: usize, val: f64) {
        match d {
            0 => self.x = val,
            1 => self.y = val,
            _ => self.z = val,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// A phase-space point `z = (x, v)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Phase6 {
    pub x: Vec3,
    pub v: Vec3,
}

impl Phase6 {
    #[inline]
    pub fn new(x: Vec3, v: Vec3) -> Self {
        Phase6 { x, v }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x.norm_sq() + self.v.norm_sq()
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }

    #[inline]
    pub fn comp(self, d: usize) -> f64 {
        if d < 3 {
            self.x.comp(d)
        } else {
            self.v.comp(d - 3)
        }
    }

    #[inline]
    pub fn set_comp(&mut self, d: usize, val: f64) {
        if d < 3 {
            self.x.set_comp(d, val);
        } else {
            self.v.set_comp(d - 3, val);
        }
    }
}

impl Add for Phase6 {
    type Output = Phase6;
    #[inline]
    fn add(self, o: Phase6) -> Phase6 {
        Phase6::new(self.x + o.x, self.v + o.v)
    }
}

impl Sub for Phase6 {
    type Output = Phase6;
    #[inline]
    fn sub(self, o: Phase6) -> Phase6 {
        Phase6::new(self.x - o.x, self.v - o.v)
    }
}

impl Mul<f64> for Phase6 {
    type Output = Phase6;
    #[inline]
    fn mul(self, s: f64) -> Phase6 {
        Phase6::new(self.x * s, self.v * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_is_antisymmetric() {
        let a = Vec3::new(1.0, 2.0, 3.0);
        let b = Vec3::new(-0.5, 4.0, 0.25);
        let ab = a.cross(b);
        let ba = b.cross(a);
        assert_eq!(ab, -ba);
        assert!(ab.dot(a).abs() < 1e-14);
        assert!(ab.dot(b).abs() < 1e-14);
    }

    #[test]
    fn triple_product_identity() {
        // (v x h) . w = -(v x w) . h, used throughout the gradient assembly.
        let v = Vec3::new(0.3, -1.2, 2.0);
        let h = Vec3::new(1.0, 0.5, -0.75);
        let w = Vec3::new(-2.0, 0.1, 0.6);
        let lhs = v.cross(h).dot(w);
        let rhs = -v.cross(w).dot(h);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn phase_component_roundtrip() {
        let mut z = Phase6::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0));
        for d in 0..6 {
            assert_eq!(z.comp(d), (d + 1) as f64);
        }
        z.set_comp(4, -1.0);
        assert_eq!(z.v.y, -1.0);
    }
}
