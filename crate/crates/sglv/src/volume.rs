//! Volume geometry, initial RGBeA volume construction from RGBD input,
//! the spherical-Gaussian lighting grid, near-surface clearing and the
//! update-weight merge.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::image::{DepthMap, HdrImage};
use crate::math::{Frame, Vec3};

/// Default axis a cleared or degenerate voxel lobe points along (volume frame).
pub const DEFAULT_LOBE_AXIS: [f64; 3] = [0.0, 0.0, 1.0];

/// Axis-aligned voxel lattice expressed in the frame of an anchor camera
/// (origin at the camera center; x, y, z along right, up, backward).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub frame: Frame,
}

impl VolumeConfig {
    /// Default geometry driven by the maximum depth of the first frame:
    /// x in [-1.1, 1.1]*d_max at 84 voxels, y in [-0.8, 0.8]*d_max at 60,
    /// z in [-1.2, 0.5]*d_max at 64.
    pub fn from_depth_max(depth_max: f64, anchor: &Camera) -> Result<VolumeConfig> {
        if !(depth_max > 0.0) || !depth_max.is_finite() {
            return Err(Error::invalid("depth_max must be positive and finite"));
        }
        Ok(VolumeConfig {
            x_range: [-1.1 * depth_max, 1.1 * depth_max],
            y_range: [-0.8 * depth_max, 0.8 * depth_max],
            z_range: [-1.2 * depth_max, 0.5 * depth_max],
            nx: 84,
            ny: 60,
            nz: 64,
            frame: anchor.frame(),
        })
    }

    /// Same proportions at reduced voxel counts; used for desk-scale fits.
    pub fn from_depth_max_with_counts(
        depth_max: f64,
        anchor: &Camera,
        nx: usize,
        ny: usize,
        nz: usize,
    ) -> Result<VolumeConfig> {
        let mut cfg = VolumeConfig::from_depth_max(depth_max, anchor)?;
        cfg.nx = nx;
        cfg.ny = ny;
        cfg.nz = nz;
        Ok(cfg)
    }

    pub fn custom(
        x_range: [f64; 2],
        y_range: [f64; 2],
        z_range: [f64; 2],
        nx: usize,
        ny: usize,
        nz: usize,
        frame: Frame,
    ) -> Result<VolumeConfig> {
        for r in [x_range, y_range, z_range] {
            if !(r[1] > r[0]) {
                return Err(Error::invalid("volume range hi must exceed lo"));
            }
        }
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid("voxel counts must be positive"));
        }
        Ok(VolumeConfig { x_range, y_range, z_range, nx, ny, nz, frame })
    }

    pub fn voxel_size(&self) -> Vec3 {
        Vec3::new(
            (self.x_range[1] - self.x_range[0]) / self.nx as f64,
            (self.y_range[1] - self.y_range[0]) / self.ny as f64,
            (self.z_range[1] - self.z_range[0]) / self.nz as f64,
        )
    }

    /// Voxel length along the depth axis of the anchor frame; the alpha and
    /// empty-channel ramps are expressed in these units.
    pub fn depth_voxel_len(&self) -> f64 {
        self.voxel_size().z
    }

    pub fn diagonal(&self) -> f64 {
        Vec3::new(
            self.x_range[1] - self.x_range[0],
            self.y_range[1] - self.y_range[0],
            self.z_range[1] - self.z_range[0],
        )
        .norm()
    }

    /// Voxel center in volume-frame coordinates.
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let s = self.voxel_size();
        Vec3::new(
            self.x_range[0] + (ix as f64 + 0.5) * s.x,
            self.y_range[0] + (iy as f64 + 0.5) * s.y,
            self.z_range[0] + (iz as f64 + 0.5) * s.z,
        )
    }

    pub fn world_to_volume(&self, p: Vec3) -> Vec3 {
        self.frame.point_from_world(p)
    }

    pub fn volume_to_world(&self, p: Vec3) -> Vec3 {
        self.frame.point_to_world(p)
    }

    pub fn contains(&self, p_vol: Vec3) -> bool {
        p_vol.x >= self.x_range[0]
            && p_vol.x <= self.x_range[1]
            && p_vol.y >= self.y_range[0]
            && p_vol.y <= self.y_range[1]
            && p_vol.z >= self.z_range[0]
            && p_vol.z <= self.z_range[1]
    }

    pub fn same_geometry(&self, o: &VolumeConfig) -> bool {
        self == o
    }

    /// The 8 (voxel, weight) taps of a trilinear lookup at a volume-frame
    /// point. None outside the volume box; inside, coordinates clamp to the
    /// voxel-center lattice so constants extend to the faces.
    pub fn trilinear_taps(&self, p_vol: Vec3) -> Option<[([usize; 3], f64); 8]> {
        if !self.contains(p_vol) {
            return None;
        }
        let s = self.voxel_size();
        let axis = |p: f64, lo: f64, side: f64, n: usize| -> (usize, usize, f64) {
            let u = ((p - lo) / side - 0.5).clamp(0.0, n as f64 - 1.0);
            let i0 = u.floor() as usize;
            let f = u - i0 as f64;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f)
        };
        let (x0, x1, fx) = axis(p_vol.x, self.x_range[0], s.x, self.nx);
        let (y0, y1, fy) = axis(p_vol.y, self.y_range[0], s.y, self.ny);
        let (z0, z1, fz) = axis(p_vol.z, self.z_range[0], s.z, self.nz);
        Some([
            ([x0, y0, z0], (1.0 - fx) * (1.0 - fy) * (1.0 - fz)),
            ([x1, y0, z0], fx * (1.0 - fy) * (1.0 - fz)),
            ([x0, y1, z0], (1.0 - fx) * fy * (1.0 - fz)),
            ([x1, y1, z0], fx * fy * (1.0 - fz)),
            ([x0, y0, z1], (1.0 - fx) * (1.0 - fy) * fz),
            ([x1, y0, z1], fx * (1.0 - fy) * fz),
            ([x0, y1, z1], (1.0 - fx) * fy * fz),
            ([x1, y1, z1], fx * fy * fz),
        ])
    }

    /// Trilinear sample of the first `grid.channels` components; zero
    /// outside the volume.
    pub fn trilinear(&self, grid: &Grid, p_vol: Vec3) -> [f64; 3] {
        let mut out = [0.0; 3];
        if let Some(taps) = self.trilinear_taps(p_vol) {
            for ([ix, iy, iz], w) in taps {
                let base = grid.voxel_index(ix, iy, iz);
                for (ch, o) in out.iter_mut().enumerate().take(grid.channels) {
                    *o += w * grid.data()[base + ch];
                }
            }
        }
        out
    }
}

/// Alpha ramp around the surface depth: soft over one voxel in front, soft
/// between 4.75 and 5 voxels behind, saturated in between.
pub fn alpha_profile(depth_at_proj: f64, voxel_depth: f64, depth_voxel_len: f64) -> f64 {
    let v = depth_voxel_len;
    let a = if depth_at_proj > voxel_depth {
        4.0 * ((voxel_depth - depth_at_proj) / v + 1.0)
    } else {
        4.0 * ((depth_at_proj - voxel_depth) / v + 5.0)
    };
    a.clamp(0.0, 1.0)
}

/// Empty-channel rule: -1 when the voxel sits more than three voxel lengths
/// in front of the observed surface, else 0.
pub fn empty_profile(depth_at_proj: f64, voxel_depth: f64, depth_voxel_len: f64) -> f64 {
    if (depth_at_proj - voxel_depth) / depth_voxel_len > 3.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects a voxel center and bilinearly samples the depth map; None for
/// behind-camera, out-of-frustum or invalid-depth voxels.
fn project_voxel(cfg: &VolumeConfig, camera: &Camera, ix: usize, iy: usize, iz: usize) -> Option<([f64; 2], f64)> {
    let v_world = cfg.volume_to_world(cfg.voxel_center(ix, iy, iz));
    let pr = camera.project(v_world);
    if pr.behind || !camera.pixel_in_image(pr.pixel) {
        return None;
    }
    Some((pr.pixel, pr.depth))
}

pub fn init_alpha(cfg: &VolumeConfig, camera: &Camera, depth: &DepthMap) -> Grid {
    let v = cfg.depth_voxel_len();
    let mut g = Grid::zeros(cfg.nx, cfg.ny, cfg.nz, 1);
    for iz in 0..cfg.nz {
        for iy in 0..cfg.ny {
            for ix in 0..cfg.nx {
                if let Some((pixel, t)) = project_voxel(cfg, camera, ix, iy, iz) {
                    if let Some(d) = depth.bilinear(pixel) {
                        g.set(ix, iy, iz, 0, alpha_profile(d, t, v));
                    }
                }
            }
        }
    }
    g
}

pub fn init_color(alpha: &Grid, camera: &Camera, image: &HdrImage, cfg: &VolumeConfig) -> Grid {
    let mut g = Grid::zeros(cfg.nx, cfg.ny, cfg.nz, 3);
    for iz in 0..cfg.nz {
        for iy in 0..cfg.ny {
            for ix in 0..cfg.nx {
                let a = alpha.get(ix, iy, iz, 0);
                if a <= 0.0 {
                    continue;
                }
                if let Some((pixel, _)) = project_voxel(cfg, camera, ix, iy, iz) {
                    let c = image.bilinear(pixel);
                    g.set_vec(ix, iy, iz, [a * c[0], a * c[1], a * c[2]]);
                }
            }
        }
    }
    g
}

pub fn init_empty_channel(cfg: &VolumeConfig, camera: &Camera, depth: &DepthMap) -> Grid {
    let v = cfg.depth_voxel_len();
    let mut g = Grid::zeros(cfg.nx, cfg.ny, cfg.nz, 1);
    for iz in 0..cfg.nz {
        for iy in 0..cfg.ny {
            for ix in 0..cfg.nx {
                if let Some((pixel, t)) = project_voxel(cfg, camera, ix, iy, iz) {
                    if let Some(d) = depth.bilinear(pixel) {
                        g.set(ix, iy, iz, 0, empty_profile(d, t, v));
                    }
                }
            }
        }
    }
    g
}

/// The RGBeA volume built from a single RGBD frame.
#[derive(Debug, Clone)]
pub struct InitialVolume {
    pub config: VolumeConfig,
    pub color: Grid,
    pub alpha: Grid,
    pub empty: Grid,
}

impl InitialVolume {
    pub fn build(cfg: &VolumeConfig, camera: &Camera, image: &HdrImage, depth: &DepthMap) -> InitialVolume {
        let alpha = init_alpha(cfg, camera, depth);
        let color = init_color(&alpha, camera, image, cfg);
        let empty = init_empty_channel(cfg, camera, depth);
        InitialVolume { config: cfg.clone(), color, alpha, empty }
    }
}

/// Spherical-Gaussian lighting volume: per voxel an RGB emission c, an
/// opacity alpha, and a lobe (amplitude w, bandwidth lambda, unit axis).
#[derive(Debug, Clone, PartialEq)]
pub struct SglvGrid {
    pub config: VolumeConfig,
    pub color: Grid,     // 3ch, >= 0
    pub alpha: Grid,     // 1ch, [0, 1]
    pub amplitude: Grid, // 3ch, >= 0
    pub bandwidth: Grid, // 1ch, >= 0
    pub axis: Grid,      // 3ch, unit per voxel
}

impl SglvGrid {
    /// All-zero volume with default lobe axes.
    pub fn empty(config: VolumeConfig) -> SglvGrid {
        let (nx, ny, nz) = (config.nx, config.ny, config.nz);
        let mut axis = Grid::zeros(nx, ny, nz, 3);
        for i in 0..axis.n_voxels() {
            axis.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&DEFAULT_LOBE_AXIS);
        }
        SglvGrid {
            config,
            color: Grid::zeros(nx, ny, nz, 3),
            alpha: Grid::zeros(nx, ny, nz, 1),
            amplitude: Grid::zeros(nx, ny, nz, 3),
            bandwidth: Grid::zeros(nx, ny, nz, 1),
            axis,
        }
    }

    /// Lift an initial RGBeA volume into an SGLV: color and alpha carried
    /// over, zero lobe amplitude, unit bandwidth, default axis.
    pub fn from_initial(init: &InitialVolume) -> SglvGrid {
        let mut g = SglvGrid::empty(init.config.clone());
        g.color = init.color.clone();
        g.alpha = init.alpha.clone();
        g.bandwidth = Grid::filled(init.config.nx, init.config.ny, init.config.nz, 1, 1.0);
        g
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.color.data().iter().chain(self.amplitude.data()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid("color/amplitude must be finite and >= 0"));
            }
        }
        for v in self.alpha.data() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::invalid("alpha must lie in [0, 1]"));
            }
        }
        for v in self.bandwidth.data() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid("bandwidth must be finite and >= 0"));
            }
        }
        for i in 0..self.axis.n_voxels() {
            let a = &self.axis.data()[i * 3..i * 3 + 3];
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::invalid("lobe axes must be unit"));
            }
        }
        Ok(())
    }

    fn grids(&self) -> [&Grid; 5] {
        [&self.color, &self.alpha, &self.amplitude, &self.bandwidth, &self.axis]
    }

    fn grids_mut(&mut self) -> [&mut Grid; 5] {
        [
            &mut self.color,
            &mut self.alpha,
            &mut self.amplitude,
            &mut self.bandwidth,
            &mut self.axis,
        ]
    }
}

fn renormalize_axes(axis: &mut Grid) {
    for i in 0..axis.n_voxels() {
        let d = &mut axis.data_mut()[i * 3..i * 3 + 3];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n > 1e-12 {
            d[0] /= n;
            d[1] /= n;
            d[2] /= n;
        } else {
            d.copy_from_slice(&DEFAULT_LOBE_AXIS);
        }
    }
}

/// Uniformly random volume: opacities in [0.1, 0.9], emission and lobe
/// amplitudes in [0, 1], bandwidths in [0, 8], random unit axes. Useful for
/// gradient checks and compositing oracles.
pub fn random_sglv(config: VolumeConfig, seed: u64) -> SglvGrid {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut vol = SglvGrid::empty(config);
    for v in vol.alpha.data_mut() {
        *v = rng.gen_range(0.1..0.9);
    }
    for v in vol.color.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    for v in vol.amplitude.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    for v in vol.bandwidth.data_mut() {
        *v = rng.gen_range(0.0..8.0);
    }
    for i in 0..vol.axis.n_voxels() {
        let d = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let d = d.try_normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        vol.axis.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&d.to_array());
    }
    vol
}

/// Scales every grid voxelwise by (1 + e): zeroed where e = -1, untouched
/// where e = 0. Cleared lobe axes fall back to the default axis so the
/// result stays a valid volume.
pub fn clear_near_surface(sglv: &SglvGrid, empty: &Grid) -> Result<SglvGrid> {
    if empty.nx != sglv.alpha.nx || empty.ny != sglv.alpha.ny || empty.nz != sglv.alpha.nz {
        return Err(Error::shape("empty channel does not match volume"));
    }
    let mut out = sglv.clone();
    let n = empty.n_voxels();
    for g in out.grids_mut() {
        let ch = g.channels;
        for i in 0..n {
            let f = 1.0 + empty.data()[i];
            for c in 0..ch {
                g.data_mut()[i * ch + c] *= f;
            }
        }
    }
    renormalize_axes(&mut out.axis);
    Ok(out)
}

/// Voxelwise convex combination: result = current*(1-u) + u*previous for all
/// five grids, with lobe axes renormalized after blending.
pub fn merge_volumes(current: &SglvGrid, previous: &SglvGrid, update: &Grid) -> Result<SglvGrid> {
    if !current.config.same_geometry(&previous.config) {
        return Err(Error::shape("volume configs differ"));
    }
    if update.channels != 1 || update.nx != current.alpha.nx || update.ny != current.alpha.ny || update.nz != current.alpha.nz {
        return Err(Error::shape("update grid does not match volume"));
    }
    if update.data().iter().any(|u| !(*u >= 0.0 && *u <= 1.0)) {
        return Err(Error::invalid("update weights must lie in [0, 1]"));
    }
    let mut out = current.clone();
    let n = update.n_voxels();
    for (g, (cur, prev)) in out
        .grids_mut()
        .into_iter()
        .zip(current.grids().into_iter().zip(previous.grids()))
    {
        let ch = g.channels;
        for i in 0..n {
            let u = update.data()[i];
            for c in 0..ch {
                let k = i * ch + c;
                g.data_mut()[k] = cur.data()[k] * (1.0 - u) + u * prev.data()[k];
            }
        }
    }
    renormalize_axes(&mut out.axis);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor_cam() -> Camera {
        Camera::new(
            Vec3::ZERO,
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            100.0,
            100.0,
            39.5,
            29.5,
            80,
            60,
        )
        .unwrap()
    }

    #[test]
    fn table_geometry() {
        let cfg = VolumeConfig::from_depth_max(5.0, &anchor_cam()).unwrap();
        assert_eq!(cfg.x_range, [-5.5, 5.5]);
        assert_eq!(cfg.y_range, [-4.0, 4.0]);
        assert_eq!(cfg.z_range, [-6.0, 2.5]);
        assert_eq!((cfg.nx, cfg.ny, cfg.nz), (84, 60, 64));
        assert!((cfg.voxel_size().x - 11.0 / 84.0).abs() < 1e-12);

        let cfg1 = VolumeConfig::from_depth_max(1.0, &anchor_cam()).unwrap();
        assert_eq!(cfg1.x_range, [-1.1, 1.1]);

        assert!(VolumeConfig::from_depth_max(0.0, &anchor_cam()).is_err());
        assert!(VolumeConfig::from_depth_max(-1.0, &anchor_cam()).is_err());
    }

    #[test]
    fn alpha_branch_values() {
        let v = 0.25;
        // exactly at the surface (behind branch, difference 0): clip(20) = 1
        assert_eq!(alpha_profile(1.0, 1.0, v), 1.0);
        // one voxel length in front of the surface: clip(4*(-1+1)) = 0
        assert_eq!(alpha_profile(1.0 + v, 1.0, v), 0.0);
        // 0.75 voxel lengths in front: clip(4*0.25) = 1
        assert!((alpha_profile(1.0 + 0.75 * v, 1.0, v) - 1.0).abs() < 1e-12);
        // 5 voxel lengths behind: clip(4*(-5+5)) = 0
        assert_eq!(alpha_profile(1.0, 1.0 + 5.0 * v, v), 0.0);
        // half a voxel in front: clip(4*0.5) -> saturated
        assert_eq!(alpha_profile(1.0 + 0.5 * v, 1.0, v), 1.0);
        // 4.875 voxels behind: clip(4*0.125) = 0.5
        assert!((alpha_profile(1.0, 1.0 + 4.875 * v, v) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_branch_values() {
        let v = 0.25;
        assert_eq!(empty_profile(1.0 + 4.0 * v, 1.0, v), -1.0); // 4 voxels in front
        assert_eq!(empty_profile(1.0 + 2.0 * v, 1.0, v), 0.0); // 2 voxels in front
        assert_eq!(empty_profile(1.0, 1.0 + 1.0 * v, v), 0.0); // behind surface
    }

    fn flat_depth_setup() -> (VolumeConfig, Camera, DepthMap) {
        let cam = anchor_cam();
        let cfg = VolumeConfig::from_depth_max(2.0, &cam).unwrap();
        let depth = DepthMap::from_data(80, 60, vec![2.0; 80 * 60]).unwrap();
        (cfg, cam, depth)
    }

    #[test]
    fn init_alpha_range_and_outside_frustum() {
        let (cfg, cam, depth) = flat_depth_setup();
        let alpha = init_alpha(&cfg, &cam, &depth);
        for iz in 0..cfg.nz {
            for iy in 0..cfg.ny {
                for ix in 0..cfg.nx {
                    let a = alpha.get(ix, iy, iz, 0);
                    assert!((0.0..=1.0).contains(&a));
                    let ok = project_voxel(&cfg, &cam, ix, iy, iz).is_some();
                    if !ok {
                        assert_eq!(a, 0.0, "outside-frustum voxel must be 0");
                    }
                }
            }
        }
        // behind-camera voxels (positive z in the anchor frame) are all 0
        for iz in 0..cfg.nz {
            let z = cfg.voxel_center(0, 0, iz).z;
            if z > 0.0 {
                for iy in 0..cfg.ny {
                    for ix in 0..cfg.nx {
                        assert_eq!(alpha.get(ix, iy, iz, 0), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn alpha_ramp_along_central_ray() {
        let (cfg, cam, depth) = flat_depth_setup();
        let v = cfg.depth_voxel_len();
        let d_surf = 2.0;
        let sample = |t: f64| {
            // point at forward depth t on the optical axis
            let p = cam.position + cam.forward() * t;
            let pr = cam.project(p);
            let d = depth.bilinear(pr.pixel).unwrap();
            alpha_profile(d, t, v)
        };
        // rises 0 -> 1 within one voxel in front of the surface
        assert_eq!(sample(d_surf - 1.0 * v), 0.0);
        assert_eq!(sample(d_surf - 0.70 * v), 1.0);
        // falls 1 -> 0 between 4.75 and 5 voxels behind
        assert_eq!(sample(d_surf + 4.70 * v), 1.0);
        assert_eq!(sample(d_surf + 5.0 * v), 0.0);
        let mid = sample(d_surf + 4.875 * v);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn init_color_scales_by_alpha() {
        let (cfg, cam, depth) = flat_depth_setup();
        let img = HdrImage::from_fn(80, 60, |_, _| [0.2, 0.4, 0.6]);
        let alpha = init_alpha(&cfg, &cam, &depth);
        let color = init_color(&alpha, &cam, &img, &cfg);
        for iz in 0..cfg.nz {
            for iy in 0..cfg.ny {
                for ix in 0..cfg.nx {
                    let a = alpha.get(ix, iy, iz, 0);
                    let c = color.get_vec(ix, iy, iz);
                    assert!((c[0] - a * 0.2).abs() < 1e-12);
                    assert!((c[1] - a * 0.4).abs() < 1e-12);
                    assert!((c[2] - a * 0.6).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn clear_zeroes_and_is_idempotent() {
        let (cfg, cam, depth) = flat_depth_setup();
        let img = HdrImage::from_fn(80, 60, |_, _| [1.0, 1.0, 1.0]);
        let init = InitialVolume::build(&cfg, &cam, &img, &depth);
        let sglv = SglvGrid::from_initial(&init);
        let cleared = clear_near_surface(&sglv, &init.empty).unwrap();
        cleared.validate().unwrap();
        let n = init.empty.n_voxels();
        let mut saw_cleared = false;
        for i in 0..n {
            if init.empty.data()[i] == -1.0 {
                saw_cleared = true;
                assert_eq!(cleared.alpha.data()[i], 0.0);
                assert_eq!(&cleared.axis.data()[i * 3..i * 3 + 3], &DEFAULT_LOBE_AXIS);
            } else {
                assert_eq!(cleared.alpha.data()[i], sglv.alpha.data()[i]);
            }
        }
        assert!(saw_cleared, "test scene should clear some voxels");
        let again = clear_near_surface(&cleared, &init.empty).unwrap();
        assert_eq!(again, cleared);
        // all-zero e is the identity
        let zero_e = Grid::zeros(cfg.nx, cfg.ny, cfg.nz, 1);
        assert_eq!(clear_near_surface(&sglv, &zero_e).unwrap(), sglv);
    }

    #[test]
    fn merge_identities_bitwise() {
        let (cfg, cam, depth) = flat_depth_setup();
        let img = HdrImage::from_fn(80, 60, |x, y| [x as f64 / 80.0, y as f64 / 60.0, 0.5]);
        let a = SglvGrid::from_initial(&InitialVolume::build(&cfg, &cam, &img, &depth));
        let mut b = a.clone();
        b.color.scale(0.5);
        for v in b.alpha.data_mut() {
            *v *= 0.7;
        }

        let zero = Grid::zeros(cfg.nx, cfg.ny, cfg.nz, 1);
        let one = Grid::filled(cfg.nx, cfg.ny, cfg.nz, 1, 1.0);
        let half = Grid::filled(cfg.nx, cfg.ny, cfg.nz, 1, 0.5);

        let m0 = merge_volumes(&a, &b, &zero).unwrap();
        assert_eq!(m0.color.data(), a.color.data());
        assert_eq!(m0.alpha.data(), a.alpha.data());
        assert_eq!(m0.bandwidth.data(), a.bandwidth.data());

        let m1 = merge_volumes(&a, &b, &one).unwrap();
        assert_eq!(m1.color.data(), b.color.data());
        assert_eq!(m1.alpha.data(), b.alpha.data());

        let mh = merge_volumes(&a, &b, &half).unwrap();
        for i in 0..a.alpha.data().len() {
            let want = (a.alpha.data()[i] + b.alpha.data()[i]) / 2.0;
            assert!((mh.alpha.data()[i] - want).abs() < 1e-15);
        }

        let mut bad = zero.clone();
        bad.data_mut()[0] = 1.5;
        assert!(merge_volumes(&a, &b, &bad).is_err());
    }

    #[test]
    fn trilinear_examples() {
        let cfg = VolumeConfig::custom(
            [0.0, 4.0],
            [0.0, 4.0],
            [0.0, 4.0],
            4,
            4,
            4,
            Frame::identity(),
        )
        .unwrap();
        let mut g = Grid::zeros(4, 4, 4, 1);
        g.set(1, 2, 2, 0, 0.0);
        g.set(2, 2, 2, 0, 2.0);
        // voxel center value
        assert_eq!(cfg.trilinear(&g, cfg.voxel_center(2, 2, 2))[0], 2.0);
        // midpoint between voxels valued 0 and 2
        let mid = (cfg.voxel_center(1, 2, 2) + cfg.voxel_center(2, 2, 2)) * 0.5;
        assert!((cfg.trilinear(&g, mid)[0] - 1.0).abs() < 1e-12);
        // constant grid: constant inside, zero outside
        let c = Grid::filled(4, 4, 4, 1, 3.5);
        assert!((cfg.trilinear(&c, Vec3::new(0.1, 3.9, 2.0))[0] - 3.5).abs() < 1e-12);
        assert_eq!(cfg.trilinear(&c, Vec3::new(-0.1, 2.0, 2.0))[0], 0.0);
        assert_eq!(cfg.trilinear(&c, Vec3::new(2.0, 2.0, 4.2))[0], 0.0);
    }

    #[test]
    fn empty_implies_zero_alpha_after_clear() {
        let (cfg, cam, depth) = flat_depth_setup();
        let img = HdrImage::from_fn(80, 60, |_, _| [1.0; 3]);
        let init = InitialVolume::build(&cfg, &cam, &img, &depth);
        let cleared = clear_near_surface(&SglvGrid::from_initial(&init), &init.empty).unwrap();
        for i in 0..init.empty.n_voxels() {
            if init.empty.data()[i] == -1.0 {
                assert_eq!(cleared.alpha.data()[i], 0.0);
            }
        }
    }
}
