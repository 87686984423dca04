//! Pinhole camera with explicit orthonormal axes.
//!
//! Pixel coordinates are continuous with pixel centers at integer
//! coordinates; `pixel.x` runs along image columns, `pixel.y` along rows.
//! Depth is measured along the forward axis (z-depth), not along the ray.

use crate::error::{Error, Result};
use crate::math::{Frame, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    /// Points away from the viewing direction.
    pub backward: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// (column, row) continuous pixel coordinates. Meaningless if `behind`.
    pub pixel: [f64; 2],
    /// Signed depth along the forward axis.
    pub depth: f64,
    pub behind: bool,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: Vec3,
        right: Vec3,
        up: Vec3,
        backward: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        let cam = Camera { position, right, up, backward, fx, fy, cx, cy, width, height };
        if !cam.frame().is_orthonormal(1e-6) {
            return Err(Error::invalid("camera axes are not orthonormal"));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if width < 2 || height < 2 {
            return Err(Error::invalid("image must be at least 2x2"));
        }
        Ok(cam)
    }

    /// Camera at `position` looking toward `target`, with y roughly along `up_hint`.
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        up_hint: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        let forward = (target - position)
            .try_normalized()
            .ok_or_else(|| Error::invalid("look_at target coincides with position"))?;
        let right = forward
            .cross(up_hint)
            .try_normalized()
            .ok_or_else(|| Error::invalid("up_hint parallel to view direction"))?;
        let up = right.cross(forward).normalized();
        Camera::new(
            position,
            right,
            up,
            -forward,
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn forward(&self) -> Vec3 {
        -self.backward
    }

    pub fn frame(&self) -> Frame {
        Frame {
            origin: self.position,
            right: self.right,
            up: self.up,
            backward: self.backward,
        }
    }

    pub fn project(&self, point: Vec3) -> Projection {
        let rel = point - self.position;
        let depth = rel.dot(self.forward());
        if depth <= 0.0 {
            return Projection { pixel: [0.0, 0.0], depth, behind: true };
        }
        let x = rel.dot(self.right);
        let y = rel.dot(self.up);
        // Rows grow downward in image space while `up` points up.
        let u = self.cx + self.fx * x / depth;
        let v = self.cy - self.fy * y / depth;
        Projection { pixel: [u, v], depth, behind: false }
    }

    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Result<Vec3> {
        if depth <= 0.0 {
            return Err(Error::invalid("unproject requires positive depth"));
        }
        let x = (pixel[0] - self.cx) / self.fx * depth;
        let y = -(pixel[1] - self.cy) / self.fy * depth;
        Ok(self.position + self.right * x + self.up * y + self.forward() * depth)
    }

    /// Pixel centers range; used to decide whether a projected point can be
    /// bilinearly sampled without border extrapolation.
    pub fn pixel_in_image(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[0] <= self.width as f64 - 1.0
            && pixel[1] >= 0.0
            && pixel[1] <= self.height as f64 - 1.0
    }

    /// Unit ray direction through a pixel.
    pub fn pixel_ray(&self, pixel: [f64; 2]) -> Vec3 {
        let x = (pixel[0] - self.cx) / self.fx;
        let y = -(pixel[1] - self.cy) / self.fy;
        (self.right * x + self.up * y + self.forward()).normalized()
    }
}
