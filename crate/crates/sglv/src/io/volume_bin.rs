//! Chunked binary volume file: magic "SGLV", version, geometry block, then
//! the five grids (color, alpha, amplitude, bandwidth, axis) as little-endian
//! f32 in z-major voxel order.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::{Frame, Vec3};
use crate::volume::{SglvGrid, VolumeConfig};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SGLV";
const VERSION: u32 = 1;

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_grid(w: &mut impl Write, g: &Grid) -> Result<()> {
    for v in g.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_grid(r: &mut impl Read, nx: usize, ny: usize, nz: usize, ch: usize) -> Result<Grid> {
    let n = nx * ny * nz * ch;
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Malformed("volume payload truncated".into()))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Grid::from_data(nx, ny, nz, ch, data)
}

pub fn save_sglv(path: &Path, sglv: &SglvGrid) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = &sglv.config;
    write_f64s(
        &mut w,
        &[
            cfg.x_range[0], cfg.x_range[1],
            cfg.y_range[0], cfg.y_range[1],
            cfg.z_range[0], cfg.z_range[1],
        ],
    )?;
    for n in [cfg.nx, cfg.ny, cfg.nz] {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    let fr = &cfg.frame;
    write_f64s(
        &mut w,
        &[
            fr.origin.x, fr.origin.y, fr.origin.z,
            fr.right.x, fr.right.y, fr.right.z,
            fr.up.x, fr.up.y, fr.up.z,
            fr.backward.x, fr.backward.y, fr.backward.z,
        ],
    )?;
    for g in [&sglv.color, &sglv.alpha, &sglv.amplitude, &sglv.bandwidth, &sglv.axis] {
        write_grid(&mut w, g)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_sglv(path: &Path) -> Result<SglvGrid> {
    let f = File::open(path)?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Malformed("not a volume file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Malformed(format!("unsupported volume version {version}")));
    }
    let mut ranges = [0.0; 6];
    for v in &mut ranges {
        *v = read_f64(&mut r)?;
    }
    let nx = read_u32(&mut r)? as usize;
    let ny = read_u32(&mut r)? as usize;
    let nz = read_u32(&mut r)? as usize;
    let mut pose = [0.0; 12];
    for v in &mut pose {
        *v = read_f64(&mut r)?;
    }
    let frame = Frame {
        origin: Vec3::new(pose[0], pose[1], pose[2]),
        right: Vec3::new(pose[3], pose[4], pose[5]),
        up: Vec3::new(pose[6], pose[7], pose[8]),
        backward: Vec3::new(pose[9], pose[10], pose[11]),
    };
    let config = VolumeConfig::custom(
        [ranges[0], ranges[1]],
        [ranges[2], ranges[3]],
        [ranges[4], ranges[5]],
        nx,
        ny,
        nz,
        frame,
    )?;
    let color = read_grid(&mut r, nx, ny, nz, 3)?;
    let alpha = read_grid(&mut r, nx, ny, nz, 1)?;
    let amplitude = read_grid(&mut r, nx, ny, nz, 3)?;
    let bandwidth = read_grid(&mut r, nx, ny, nz, 1)?;
    let axis = read_grid(&mut r, nx, ny, nz, 3)?;
    Ok(SglvGrid { config, color, alpha, amplitude, bandwidth, axis })
}
