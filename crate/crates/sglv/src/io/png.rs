//! Clamped 8-bit and 16-bit PNG export for previews and masks.

use crate::equirect::EquirectMap;
use crate::error::{Error, Result};
use crate::image::HdrImage;
use std::path::Path;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Clamped LDR preview of an HDR image.
pub fn save_hdr_preview(path: &Path, img: &HdrImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.get(x, y);
            buf.put_pixel(x as u32, y as u32, image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]));
        }
    }
    buf.save(path).map_err(|e| Error::Malformed(format!("png write: {e}")))
}

/// Clamped LDR preview of a 3-channel equirect map.
pub fn save_equirect_preview(path: &Path, map: &EquirectMap) -> Result<()> {
    if map.channels != 3 {
        return Err(Error::invalid("equirect preview needs 3 channels"));
    }
    let mut buf = image::RgbImage::new(map.width() as u32, map.height as u32);
    for r in 0..map.height {
        for c in 0..map.width() {
            let p = map.get3(r, c);
            buf.put_pixel(c as u32, r as u32, image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]));
        }
    }
    buf.save(path).map_err(|e| Error::Malformed(format!("png write: {e}")))
}

/// Single-channel map (mask or blend weight) as 16-bit grayscale.
pub fn save_mask_png(path: &Path, map: &EquirectMap) -> Result<()> {
    if map.channels != 1 {
        return Err(Error::invalid("mask export needs 1 channel"));
    }
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(map.width() as u32, map.height as u32);
    for r in 0..map.height {
        for c in 0..map.width() {
            buf.put_pixel(c as u32, r as u32, image::Luma([to_u16(map.get(r, c, 0))]));
        }
    }
    buf.save(path).map_err(|e| Error::Malformed(format!("png write: {e}")))
}
