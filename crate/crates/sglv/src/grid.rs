//! Dense voxel grids with a fixed channel count.
//!
//! Layout is z-major: index = ((iz * ny + iy) * nx + ix) * channels + ch,
//! which is also the on-disk order of the volume file format.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(nx: usize, ny: usize, nz: usize, channels: usize) -> Grid {
        Grid { nx, ny, nz, channels, data: vec![0.0; nx * ny * nz * channels] }
    }

    pub fn filled(nx: usize, ny: usize, nz: usize, channels: usize, v: f64) -> Grid {
        let mut g = Grid::zeros(nx, ny, nz, channels);
        g.data.fill(v);
        g
    }

    pub fn from_data(nx: usize, ny: usize, nz: usize, channels: usize, data: Vec<f64>) -> Result<Grid> {
        if data.len() != nx * ny * nz * channels {
            return Err(Error::shape("grid data length"));
        }
        Ok(Grid { nx, ny, nz, channels, data })
    }

    #[inline]
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ((iz * self.ny + iy) * self.nx + ix) * self.channels
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize, ch: usize) -> f64 {
        self.data[self.voxel_index(ix, iy, iz) + ch]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, ch: usize, v: f64) {
        let i = self.voxel_index(ix, iy, iz) + ch;
        self.data[i] = v;
    }

    pub fn get_vec(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        debug_assert_eq!(self.channels, 3);
        let i = self.voxel_index(ix, iy, iz);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_vec(&mut self, ix: usize, iy: usize, iz: usize, v: [f64; 3]) {
        debug_assert_eq!(self.channels, 3);
        let i = self.voxel_index(ix, iy, iz);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn same_shape(&self, o: &Grid) -> bool {
        self.nx == o.nx && self.ny == o.ny && self.nz == o.nz && self.channels == o.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn add_assign(&mut self, o: &Grid) {
        debug_assert!(self.same_shape(o));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_z_major() {
        let mut g = Grid::zeros(3, 2, 2, 1);
        g.set(2, 1, 0, 0, 5.0);
        assert_eq!(g.data()[1 * 3 + 2], 5.0);
        g.set(0, 0, 1, 0, 7.0);
        assert_eq!(g.data()[2 * 3 + 0], 7.0);
    }
}
