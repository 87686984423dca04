//! Equirectangular panoramas and the pixel/direction convention.
//!
//! Row 0 sits at the +y pole; the polar angle theta = pi*(row+0.5)/height is
//! measured from +y. The azimuth phi = 2*pi*(col+0.5)/(2*height) is measured
//! from +x toward +z. Directions are expressed in the fixed frame of the
//! active lighting volume.

use crate::error::{Error, Result};
use crate::math::Vec3;
use std::f64::consts::PI;

/// Equirectangular map with width = 2 * height and 1 or 3 channels.
/// 3-channel maps hold HDR radiance; 1-channel maps hold masks, blend
/// weights or depth panoramas (which may carry an infinite "unseen"
/// sentinel).
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectMap {
    pub height: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl EquirectMap {
    pub fn zeros(height: usize, channels: usize) -> EquirectMap {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        EquirectMap { height, channels, data: vec![0.0; 2 * height * height * channels] }
    }

    pub fn filled(height: usize, channels: usize, value: f64) -> EquirectMap {
        let mut m = EquirectMap::zeros(height, channels);
        m.data.fill(value);
        m
    }

    pub fn from_data(height: usize, channels: usize, data: Vec<f64>) -> Result<EquirectMap> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid("EquirectMap must have 1 or 3 channels"));
        }
        if data.len() != 2 * height * height * channels {
            return Err(Error::shape("EquirectMap data length"));
        }
        Ok(EquirectMap { height, channels, data })
    }

    pub fn width(&self) -> usize {
        2 * self.height
    }

    fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width() + col) * self.channels + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.idx(row, col, ch);
        self.data[i] = v;
    }

    pub fn get3(&self, row: usize, col: usize) -> [f64; 3] {
        debug_assert_eq!(self.channels, 3);
        let i = self.idx(row, col, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set3(&mut self, row: usize, col: usize, v: [f64; 3]) {
        debug_assert_eq!(self.channels, 3);
        let i = self.idx(row, col, 0);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, o: &EquirectMap) -> bool {
        self.height == o.height && self.channels == o.channels
    }

    /// Solid angle subtended by any pixel of the given row.
    pub fn pixel_solid_angle(&self, row: usize) -> f64 {
        let theta = PI * (row as f64 + 0.5) / self.height as f64;
        (PI / self.height as f64) * (2.0 * PI / self.width() as f64) * theta.sin()
    }

    /// Bilinear radiance lookup along a direction; columns wrap, rows clamp.
    pub fn sample_dir(&self, dir: Vec3) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, c, w) in self.sample_dir_weights(dir) {
            for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
                *o += w * self.get(r, c, ch);
            }
        }
        if self.channels == 1 {
            out[1] = out[0];
            out[2] = out[0];
        }
        out
    }

    /// The 4 (row, col, weight) taps of `sample_dir`; weights sum to 1.
    /// Exposed so adjoint passes can scatter gradients through the lookup.
    pub fn sample_dir_weights(&self, dir: Vec3) -> [(usize, usize, f64); 4] {
        let (row, col) = direction_to_pixel(dir, self.height);
        let h = self.height;
        let w = self.width();
        let r = row.clamp(0.0, h as f64 - 1.0);
        let r0 = r.floor() as usize;
        let fr = r - r0 as f64;
        let r1 = (r0 + 1).min(h - 1);
        let c = col.rem_euclid(w as f64);
        let c0f = c.floor();
        let fc = c - c0f;
        let c0 = (c0f as usize) % w;
        let c1 = (c0 + 1) % w;
        [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c1, (1.0 - fr) * fc),
            (r1, c0, fr * (1.0 - fc)),
            (r1, c1, fr * fc),
        ]
    }
}

/// Unit direction through the center of an equirect pixel.
pub fn pixel_to_direction(row: usize, col: usize, height: usize) -> Vec3 {
    assert!(row < height && col < 2 * height, "pixel indices out of range");
    pixel_to_direction_f(row as f64, col as f64, height)
}

/// Continuous-coordinate variant of `pixel_to_direction`.
pub fn pixel_to_direction_f(row: f64, col: f64, height: usize) -> Vec3 {
    let theta = PI * (row + 0.5) / height as f64;
    let phi = 2.0 * PI * (col + 0.5) / (2.0 * height as f64);
    Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin())
}

/// Continuous (row, col) of a unit direction; col is wrapped into
/// [0, 2*height).
pub fn direction_to_pixel(dir: Vec3, height: usize) -> (f64, f64) {
    let n = dir.norm();
    assert!(n > 1e-12, "direction_to_pixel needs a nonzero direction");
    let d = dir / n;
    let theta = d.y.clamp(-1.0, 1.0).acos();
    let phi = d.z.atan2(d.x).rem_euclid(2.0 * PI);
    let row = theta * height as f64 / PI - 0.5;
    let col = (phi * (2.0 * height as f64) / (2.0 * PI) - 0.5).rem_euclid(2.0 * height as f64);
    (row, col)
}
