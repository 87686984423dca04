//! File formats: PFM for HDR/depth data, PNG for LDR previews and masks,
//! and the chunked binary volume format.

pub mod pfm;
pub mod png;
pub mod volume_bin;

use crate::equirect::EquirectMap;
use crate::error::{Error, Result};
use crate::image::{DepthMap, HdrImage};
use std::path::Path;

pub fn save_hdr_image(path: &Path, img: &HdrImage) -> Result<()> {
    pfm::write_pfm(path, img.width, img.height, 3, img.data())
}

pub fn load_hdr_image(path: &Path) -> Result<HdrImage> {
    let p = pfm::read_pfm(path)?;
    if p.channels != 3 {
        return Err(Error::Malformed("expected a 3-channel PFM image".into()));
    }
    HdrImage::from_data(p.width, p.height, p.data)
}

/// Invalid depths are stored as 0 and recovered as invalid on load.
pub fn save_depth_map(path: &Path, depth: &DepthMap) -> Result<()> {
    let data: Vec<f64> = (0..depth.width * depth.height)
        .map(|i| depth.get(i % depth.width, i / depth.width).unwrap_or(0.0))
        .collect();
    pfm::write_pfm(path, depth.width, depth.height, 1, &data)
}

pub fn load_depth_map(path: &Path) -> Result<DepthMap> {
    let p = pfm::read_pfm(path)?;
    if p.channels != 1 {
        return Err(Error::Malformed("expected a 1-channel depth PFM".into()));
    }
    DepthMap::from_data(p.width, p.height, p.data)
}

pub fn save_equirect(path: &Path, map: &EquirectMap) -> Result<()> {
    pfm::write_pfm(path, map.width(), map.height, map.channels, map.data())
}

pub fn load_equirect(path: &Path) -> Result<EquirectMap> {
    let p = pfm::read_pfm(path)?;
    if p.width != 2 * p.height {
        return Err(Error::Malformed("equirect PFM must have width = 2 * height".into()));
    }
    EquirectMap::from_data(p.height, p.channels, p.data)
}
