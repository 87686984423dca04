//! HDR color images and metric depth maps with bilinear sampling.

use crate::error::{Error, Result};

/// Linear-radiance RGB image, row-major, origin at the top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>, // 3 channels interleaved
}

impl HdrImage {
    pub fn zeros(width: usize, height: usize) -> HdrImage {
        HdrImage { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<HdrImage> {
        if data.len() != width * height * 3 {
            return Err(Error::shape("HdrImage data length"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("HdrImage values must be finite and >= 0"));
        }
        Ok(HdrImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> HdrImage {
        let mut img = HdrImage::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&v);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Bilinear sample at continuous pixel coordinates (col, row), clamped
    /// at the border.
    pub fn bilinear(&self, point: [f64; 2]) -> [f64; 3] {
        let (x0, y0, x1, y1, fx, fy) = bilinear_setup(point, self.width, self.height);
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Single-channel metric depth along the camera's forward axis plus a
/// validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Values <= 0 or non-finite are marked invalid.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<DepthMap> {
        if data.len() != width * height {
            return Err(Error::shape("DepthMap data length"));
        }
        let valid = data.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(DepthMap { width, height, data, valid })
    }

    pub fn invalid(width: usize, height: usize) -> DepthMap {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        if self.valid[i] {
            Some(self.data[i])
        } else {
            None
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Maximum valid depth, or None if the map is entirely invalid.
    pub fn max_depth(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (d, v) in self.data.iter().zip(&self.valid) {
            if *v {
                best = Some(best.map_or(*d, |b: f64| b.max(*d)));
            }
        }
        best
    }

    /// Bilinear sample; None when any of the 4 contributing pixels is invalid.
    pub fn bilinear(&self, point: [f64; 2]) -> Option<f64> {
        let (x0, y0, x1, y1, fx, fy) = bilinear_setup(point, self.width, self.height);
        let d00 = self.get(x0, y0)?;
        let d10 = self.get(x1, y0)?;
        let d01 = self.get(x0, y1)?;
        let d11 = self.get(x1, y1)?;
        let top = d00 * (1.0 - fx) + d10 * fx;
        let bot = d01 * (1.0 - fx) + d11 * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }
}

/// Shared clamped-border bilinear index computation.
pub(crate) fn bilinear_setup(
    point: [f64; 2],
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize, f64, f64) {
    let x = point[0].clamp(0.0, width as f64 - 1.0);
    let y = point[1].clamp(0.0, height as f64 - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    // Zero-weight corners collapse onto the sampled pixel so that an exact
    // pixel-center query touches only that pixel (matters for validity masks).
    let x1 = if fx > 0.0 { (x0 + 1).min(width - 1) } else { x0 };
    let y1 = if fy > 0.0 { (y0 + 1).min(height - 1) } else { y0 };
    (x0, y0, x1, y1, fx, fy)
}
