//! Small 3D vector and orthonormal-frame types shared by every module.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Returns None for (near-)zero vectors.
    pub fn try_normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 1e-12 {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn normalized(self) -> Vec3 {
        self.try_normalized()
            .expect("cannot normalize a zero vector")
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }

    /// Angle to another vector in radians, both assumed unit.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.dot(o).clamp(-1.0, 1.0).acos()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Right-handed orthonormal frame with an origin. The `backward` axis points
/// away from the viewing direction, so `forward() = -backward`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub backward: Vec3,
}

impl Frame {
    pub fn identity() -> Frame {
        Frame {
            origin: Vec3::ZERO,
            right: Vec3::new(1.0, 0.0, 0.0),
            up: Vec3::new(0.0, 1.0, 0.0),
            backward: Vec3::new(0.0, 0.0, 1.0),
        }
    }

    pub fn forward(&self) -> Vec3 {
        -self.backward
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        self.right.is_unit(tol)
            && self.up.is_unit(tol)
            && self.backward.is_unit(tol)
            && self.right.dot(self.up).abs() <= tol
            && self.right.dot(self.backward).abs() <= tol
            && self.up.dot(self.backward).abs() <= tol
    }

    /// Local direction (x along right, y along up, z along backward) to world.
    pub fn dir_to_world(&self, d: Vec3) -> Vec3 {
        self.right * d.x + self.up * d.y + self.backward * d.z
    }

    pub fn dir_from_world(&self, d: Vec3) -> Vec3 {
        Vec3::new(d.dot(self.right), d.dot(self.up), d.dot(self.backward))
    }

    pub fn point_to_world(&self, p: Vec3) -> Vec3 {
        self.origin + self.dir_to_world(p)
    }

    pub fn point_from_world(&self, p: Vec3) -> Vec3 {
        self.dir_from_world(p - self.origin)
    }

    /// Rotation angle in radians between the orientations of two frames.
    pub fn rotation_angle_to(&self, o: &Frame) -> f64 {
        // trace of R_self^T * R_other
        let tr = self.right.dot(o.right) + self.up.dot(o.up) + self.backward.dot(o.backward);
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}
