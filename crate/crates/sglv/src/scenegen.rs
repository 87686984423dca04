//! Procedural ground-truth harness: axis-aligned box rooms with rectangular
//! area lights, an optional directional "window" light and box occluders,
//! rendered with deterministic direct lighting. Supplies RGBD frames,
//! ground-truth probe environment maps, smooth camera trajectories and
//! probe positions.

use crate::camera::Camera;
use crate::equirect::{pixel_to_direction, EquirectMap};
use crate::error::{Error, Result};
use crate::image::{DepthMap, HdrImage};
use crate::math::{Frame, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Per-wall surface description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Diffuse { albedo: [f64; 3] },
    /// Checkerboard in the two in-plane coordinates of the wall.
    Checker { albedo_a: [f64; 3], albedo_b: [f64; 3], scale: f64 },
}

impl Material {
    fn albedo_at(&self, u: f64, v: f64) -> [f64; 3] {
        match self {
            Material::Diffuse { albedo } => *albedo,
            Material::Checker { albedo_a, albedo_b, scale } => {
                let k = (u / scale).floor() as i64 + (v / scale).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    *albedo_a
                } else {
                    *albedo_b
                }
            }
        }
    }
}

/// Rectangular area light: corner plus two edge vectors spanning the panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectLight {
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub radiance: [f64; 3],
}

impl RectLight {
    fn normal(&self) -> Vec3 {
        self.edge_u.cross(self.edge_v).normalized()
    }

    fn area(&self) -> f64 {
        self.edge_u.cross(self.edge_v).norm()
    }

    /// Whether a point lies on the panel (within plane tolerance).
    fn contains(&self, p: Vec3) -> bool {
        let rel = p - self.corner;
        if rel.dot(self.normal()).abs() > 1e-6 {
            return false;
        }
        let s = rel.dot(self.edge_u) / self.edge_u.norm_sq();
        let t = rel.dot(self.edge_v) / self.edge_v.norm_sq();
        (-1e-9..=1.0 + 1e-9).contains(&s) && (-1e-9..=1.0 + 1e-9).contains(&t)
    }
}

/// Directional light entering through a wall aperture. `sun_dir` points from
/// the room toward the source; looking along it through the aperture shows a
/// sharp bright lobe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowLight {
    pub sun_dir: Vec3,
    pub radiance: [f64; 3],
    pub aperture: RectLight,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
}

fn default_sharpness() -> f64 {
    50.0
}

/// Axis-aligned diffuse box inside the room.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub min: Vec3,
    pub max: Vec3,
    pub albedo: [f64; 3],
}

/// Room spanning [0, extents] with walls indexed x0, x1, y0, y1, z0, z1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxScene {
    pub extents: Vec3,
    pub walls: [Material; 6],
    pub lights: Vec<RectLight>,
    #[serde(default)]
    pub occluders: Vec<BoxObstacle>,
    #[serde(default)]
    pub window: Option<WindowLight>,
    #[serde(default)]
    pub ambient: [f64; 3],
}

impl BoxScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.extents.x > 0.0 && self.extents.y > 0.0 && self.extents.z > 0.0) {
            return Err(Error::invalid("room extents must be positive"));
        }
        let inside = |p: Vec3| {
            p.x >= -1e-9
                && p.x <= self.extents.x + 1e-9
                && p.y >= -1e-9
                && p.y <= self.extents.y + 1e-9
                && p.z >= -1e-9
                && p.z <= self.extents.z + 1e-9
        };
        let rects = self
            .lights
            .iter()
            .chain(self.window.iter().map(|w| &w.aperture));
        for l in rects {
            for corner in [
                l.corner,
                l.corner + l.edge_u,
                l.corner + l.edge_v,
                l.corner + l.edge_u + l.edge_v,
            ] {
                if !inside(corner) {
                    return Err(Error::invalid("light panel outside the room"));
                }
            }
            if l.radiance.iter().any(|r| *r < 0.0) || l.area() <= 0.0 {
                return Err(Error::invalid("light needs nonnegative radiance and area"));
            }
        }
        for b in &self.occluders {
            if !inside(b.min) || !inside(b.max) || b.min.x >= b.max.x || b.min.y >= b.max.y || b.min.z >= b.max.z {
                return Err(Error::invalid("occluder box malformed or outside the room"));
            }
        }
        if self.ambient.iter().any(|a| *a < 0.0) {
            return Err(Error::invalid("ambient must be nonnegative"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x > 0.0
            && p.x < self.extents.x
            && p.y > 0.0
            && p.y < self.extents.y
            && p.z > 0.0
            && p.z < self.extents.z
    }

    /// Small demo room: gray walls, checker floor, one bright ceiling panel.
    pub fn example() -> BoxScene {
        let gray = Material::Diffuse { albedo: [0.6, 0.6, 0.6] };
        BoxScene {
            extents: Vec3::new(4.0, 3.0, 5.0),
            walls: [
                gray.clone(),
                gray.clone(),
                Material::Checker {
                    albedo_a: [0.7, 0.7, 0.7],
                    albedo_b: [0.25, 0.25, 0.25],
                    scale: 0.5,
                },
                gray.clone(),
                gray.clone(),
                gray,
            ],
            lights: vec![RectLight {
                corner: Vec3::new(1.5, 3.0, 2.0),
                edge_u: Vec3::new(1.0, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 0.0, 1.0),
                radiance: [20.0, 18.0, 15.0],
            }],
            occluders: Vec::new(),
            window: None,
            ambient: [0.05, 0.05, 0.05],
        }
    }
}

struct SceneHit {
    t: f64,
    point: Vec3,
    normal: Vec3,
    /// Some(wall index) for room walls, None for occluder surfaces.
    wall: Option<usize>,
    albedo: [f64; 3],
}

fn extent_axis(e: Vec3, axis: usize) -> f64 {
    match axis {
        0 => e.x,
        1 => e.y,
        _ => e.z,
    }
}

fn vec_axis(p: Vec3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

fn axis_unit(axis: usize, sign: f64) -> Vec3 {
    match axis {
        0 => Vec3::new(sign, 0.0, 0.0),
        1 => Vec3::new(0.0, sign, 0.0),
        _ => Vec3::new(0.0, 0.0, sign),
    }
}

/// Entry distance of a ray into an axis-aligned box, with the entry normal.
fn box_entry(min: Vec3, max: Vec3, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
    let mut t0 = 1e-9;
    let mut t1 = f64::INFINITY;
    let mut entry_axis = 0;
    for axis in 0..3 {
        let o = vec_axis(origin, axis);
        let d = vec_axis(dir, axis);
        let (lo, hi) = (vec_axis(min, axis), vec_axis(max, axis));
        if d.abs() < 1e-14 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if a > t0 {
            t0 = a;
            entry_axis = axis;
        }
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    if t0 <= 1e-9 {
        return None; // origin inside or box behind
    }
    let sign = -vec_axis(dir, entry_axis).signum();
    Some((t0, axis_unit(entry_axis, sign)))
}

fn trace(scene: &BoxScene, origin: Vec3, dir: Vec3) -> Option<SceneHit> {
    // exit point through the room walls (origin assumed inside the room)
    let mut best: Option<SceneHit> = None;
    let mut wall_t = f64::INFINITY;
    let mut wall_axis = 0;
    for axis in 0..3 {
        let d = vec_axis(dir, axis);
        if d.abs() < 1e-14 {
            continue;
        }
        let plane = if d > 0.0 { extent_axis(scene.extents, axis) } else { 0.0 };
        let t = (plane - vec_axis(origin, axis)) / d;
        if t > 1e-9 && t < wall_t {
            wall_t = t;
            wall_axis = axis;
        }
    }
    if wall_t.is_finite() {
        let d = vec_axis(dir, wall_axis);
        let wall = wall_axis * 2 + usize::from(d > 0.0);
        let point = origin + dir * wall_t;
        let (u, v) = match wall_axis {
            0 => (point.y, point.z),
            1 => (point.x, point.z),
            _ => (point.x, point.y),
        };
        best = Some(SceneHit {
            t: wall_t,
            point,
            normal: axis_unit(wall_axis, -d.signum()),
            wall: Some(wall),
            albedo: scene.walls[wall].albedo_at(u, v),
        });
    }
    for b in &scene.occluders {
        if let Some((t, normal)) = box_entry(b.min, b.max, origin, dir) {
            if best.as_ref().is_none_or(|h| t < h.t) {
                best = Some(SceneHit {
                    t,
                    point: origin + dir * t,
                    normal,
                    wall: None,
                    albedo: b.albedo,
                });
            }
        }
    }
    best
}

/// Whether any occluder blocks the open segment a..b (walls cannot, the
/// room is convex).
fn segment_blocked(scene: &BoxScene, a: Vec3, b: Vec3) -> bool {
    let dir = b - a;
    let len = dir.norm();
    if len < 1e-12 {
        return false;
    }
    let dir = dir / len;
    scene
        .occluders
        .iter()
        .any(|o| matches!(box_entry(o.min, o.max, a, dir), Some((t, _)) if t < len - 1e-6))
}

/// Stratified samples per rectangular light edge (4x4 midpoints): keeps the
/// direct-lighting integral deterministic and shared by both renderers.
const LIGHT_GRID: usize = 4;

fn direct_lighting(scene: &BoxScene, p: Vec3, n: Vec3, albedo: [f64; 3]) -> [f64; 3] {
    let mut out = [
        scene.ambient[0] * albedo[0],
        scene.ambient[1] * albedo[1],
        scene.ambient[2] * albedo[2],
    ];
    let p_off = p + n * 1e-6;
    for light in &scene.lights {
        let ln = light.normal();
        let per_sample = light.area() / (LIGHT_GRID * LIGHT_GRID) as f64;
        for i in 0..LIGHT_GRID {
            for j in 0..LIGHT_GRID {
                let s = (i as f64 + 0.5) / LIGHT_GRID as f64;
                let t = (j as f64 + 0.5) / LIGHT_GRID as f64;
                let x = light.corner + light.edge_u * s + light.edge_v * t;
                let to_light = x - p_off;
                let r2 = to_light.norm_sq();
                if r2 < 1e-12 {
                    continue;
                }
                let w = to_light / r2.sqrt();
                let cos_p = n.dot(w);
                let cos_l = ln.dot(w).abs();
                if cos_p <= 0.0 || cos_l <= 0.0 {
                    continue;
                }
                if segment_blocked(scene, p_off, x) {
                    continue;
                }
                let g = cos_p * cos_l / r2 * per_sample / PI;
                for ch in 0..3 {
                    out[ch] += albedo[ch] * light.radiance[ch] * g;
                }
            }
        }
    }
    if let Some(win) = &scene.window {
        let cos = n.dot(win.sun_dir);
        if cos > 0.0 {
            // the sun ray must leave through the aperture unblocked
            let an = win.aperture.normal();
            let denom = win.sun_dir.dot(an);
            if denom.abs() > 1e-12 {
                let t = (win.aperture.corner - p_off).dot(an) / denom;
                if t > 1e-9 {
                    let x = p_off + win.sun_dir * t;
                    if win.aperture.contains(x) && !segment_blocked(scene, p_off, x) {
                        // irradiance of the sharp lobe: integral of
                        // exp(s(cos-1)) over the sphere is close to 2 pi / s
                        let e = 2.0 * PI / win.sharpness;
                        for ch in 0..3 {
                            out[ch] += albedo[ch] * win.radiance[ch] * e * cos / PI;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Radiance arriving at `origin` from direction `dir` (both in world
/// coordinates, origin inside the room), and the hit distance.
pub fn trace_radiance(scene: &BoxScene, origin: Vec3, dir: Vec3) -> ([f64; 3], f64) {
    let hit = match trace(scene, origin, dir) {
        Some(h) => h,
        None => return ([0.0; 3], f64::INFINITY),
    };
    if hit.wall.is_some() {
        for light in &scene.lights {
            if light.contains(hit.point) {
                return (light.radiance, hit.t);
            }
        }
        if let Some(win) = &scene.window {
            if win.aperture.contains(hit.point) {
                let lobe = (win.sharpness * (dir.dot(win.sun_dir) - 1.0)).exp();
                return (
                    [
                        win.radiance[0] * lobe,
                        win.radiance[1] * lobe,
                        win.radiance[2] * lobe,
                    ],
                    hit.t,
                );
            }
        }
    }
    (direct_lighting(scene, hit.point, hit.normal, hit.albedo), hit.t)
}

/// Ray-cast RGBD frame: HDR radiance plus exact forward (z) depth.
pub fn render_scene_view(scene: &BoxScene, camera: &Camera) -> Result<(HdrImage, DepthMap)> {
    scene.validate()?;
    if !scene.contains(camera.position) {
        return Err(Error::invalid("camera must be inside the room"));
    }
    let (w, h) = (camera.width, camera.height);
    let mut img = HdrImage::zeros(w, h);
    let mut depth = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let dir = camera.pixel_ray([x as f64, y as f64]);
            let (rad, t) = trace_radiance(scene, camera.position, dir);
            img.set(x, y, rad);
            depth[y * w + x] = t * dir.dot(camera.forward());
        }
    }
    Ok((img, DepthMap::from_data(w, h, depth)?))
}

/// Ground-truth HDR environment map at a probe. Pixel directions follow the
/// equirect convention in `frame` (the volume frame).
pub fn render_gt_envmap(
    scene: &BoxScene,
    position: Vec3,
    height: usize,
    frame: &Frame,
) -> Result<EquirectMap> {
    scene.validate()?;
    if !scene.contains(position) {
        return Err(Error::invalid("probe must be inside the room"));
    }
    let width = 2 * height;
    let mut map = EquirectMap::zeros(height, 3);
    map.data_mut()
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(row, out)| {
            for col in 0..width {
                let dir = frame.dir_to_world(pixel_to_direction(row, col, height));
                let (rad, _) = trace_radiance(scene, position, dir);
                out[col * 3..col * 3 + 3].copy_from_slice(&rad);
            }
        });
    Ok(map)
}

const TRAJ_MARGIN: f64 = 0.1;
const TRAJ_STEP: f64 = 0.09;
const TRAJ_ROT_DEG: f64 = 4.78;

/// Frame resolution and intrinsics used for generated sequences.
pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;
pub const FRAME_FOCAL: f64 = 260.0;

fn catmull_rom(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3, t: f64) -> Vec3 {
    let t2 = t * t;
    let t3 = t2 * t;
    (p1 * 2.0
        + (p2 - p0) * t
        + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2
        + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3)
        * 0.5
}

/// Smooth random in-room camera path with mean inter-frame translation near
/// 0.09 m and mean rotation near 4.78 degrees. Deterministic given the seed.
pub fn gen_trajectory(scene: &BoxScene, n_frames: usize, seed: u64) -> Result<Vec<Camera>> {
    if n_frames == 0 {
        return Err(Error::invalid("trajectory needs at least one frame"));
    }
    // waypoints live in a doubly shrunken box so spline overshoot stays
    // within the real margin
    let lo = Vec3::splat(2.0 * TRAJ_MARGIN);
    let hi = scene.extents - Vec3::splat(2.0 * TRAJ_MARGIN);
    if hi.x <= lo.x || hi.y <= lo.y || hi.z <= lo.z {
        return Err(Error::invalid("room too small for a trajectory"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rand_pt = |rng: &mut ChaCha8Rng| {
        Vec3::new(
            rng.gen_range(lo.x..hi.x),
            rng.gen_range(lo.y..hi.y),
            rng.gen_range(lo.z..hi.z),
        )
    };
    let center = scene.extents * 0.5;
    let make_camera = |pos: Vec3, look: Vec3| {
        Camera::look_at(
            pos,
            look,
            Vec3::new(0.0, 1.0, 0.0),
            FRAME_FOCAL,
            FRAME_FOCAL,
            FRAME_WIDTH,
            FRAME_HEIGHT,
        )
    };
    if n_frames == 1 {
        let pos = rand_pt(&mut rng);
        return Ok(vec![make_camera(pos, center)?]);
    }

    // densely sampled spline, extended until it is long enough to carry
    // n_frames steps of 0.09 m
    let needed = TRAJ_STEP * (n_frames - 1) as f64 * 1.05;
    let mut wps: Vec<Vec3> = (0..4).map(|_| rand_pt(&mut rng)).collect();
    let mut dense = loop {
        let mut dense = Vec::new();
        for s in 0..wps.len() - 1 {
            let p0 = wps[s.saturating_sub(1)];
            let p3 = wps[(s + 2).min(wps.len() - 1)];
            for k in 0..200 {
                dense.push(catmull_rom(p0, wps[s], wps[s + 1], p3, k as f64 / 200.0));
            }
        }
        dense.push(*wps.last().unwrap());
        let len: f64 = dense.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        if len >= needed {
            break dense;
        }
        if wps.len() > 500 {
            return Err(Error::invalid("failed to build a long enough path"));
        }
        wps.push(rand_pt(&mut rng));
    };

    // arc-length resampling at the exact step
    let clamp_pos = |p: Vec3| {
        Vec3::new(
            p.x.clamp(TRAJ_MARGIN, scene.extents.x - TRAJ_MARGIN),
            p.y.clamp(TRAJ_MARGIN, scene.extents.y - TRAJ_MARGIN),
            p.z.clamp(TRAJ_MARGIN, scene.extents.z - TRAJ_MARGIN),
        )
    };
    let mut positions = vec![clamp_pos(dense[0])];
    let mut acc = 0.0;
    let mut i = 0;
    while positions.len() < n_frames && i + 1 < dense.len() {
        let seg = (dense[i + 1] - dense[i]).norm();
        if acc + seg >= TRAJ_STEP {
            let f = (TRAJ_STEP - acc) / seg;
            let p = dense[i] + (dense[i + 1] - dense[i]) * f;
            positions.push(clamp_pos(p));
            // restart accumulation from the emitted point
            let rest = dense.split_off(i + 1);
            dense = rest;
            dense.insert(0, p);
            i = 0;
            acc = 0.0;
        } else {
            acc += seg;
            i += 1;
        }
    }
    if positions.len() < n_frames {
        return Err(Error::invalid("path exhausted before reaching frame count"));
    }

    // smooth sinusoidal yaw/pitch; amplitude calibrated to the target mean
    // rotation (rotation is essentially linear in the amplitude)
    let yaw0: f64 = rng.gen_range(0.0..2.0 * PI);
    let cycles: f64 = rng.gen_range(1.5..3.0);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let build = |amp: f64| -> Result<Vec<Camera>> {
        positions
            .iter()
            .enumerate()
            .map(|(k, &pos)| {
                let s = k as f64 / (n_frames - 1) as f64;
                let yaw = yaw0 + amp * (2.0 * PI * cycles * s).sin();
                let pitch = 0.4 * amp * (2.0 * PI * cycles * s + phase).sin();
                let dir = Vec3::new(
                    pitch.cos() * yaw.cos(),
                    pitch.sin(),
                    pitch.cos() * yaw.sin(),
                );
                make_camera(pos, pos + dir)
            })
            .collect()
    };
    let mean_rot = |cams: &[Camera]| {
        cams.windows(2)
            .map(|w| w[0].frame().rotation_angle_to(&w[1].frame()).to_degrees())
            .sum::<f64>()
            / (cams.len() - 1) as f64
    };
    let mut amp = 0.3;
    let mut cams = build(amp)?;
    for _ in 0..12 {
        let m = mean_rot(&cams);
        if (m - TRAJ_ROT_DEG).abs() / TRAJ_ROT_DEG < 0.05 {
            break;
        }
        amp *= TRAJ_ROT_DEG / m.max(1e-9);
        cams = build(amp)?;
    }
    let m = mean_rot(&cams);
    if (m - TRAJ_ROT_DEG).abs() / TRAJ_ROT_DEG > 0.2 {
        return Err(Error::invalid("could not reach the target rotation rate"));
    }
    Ok(cams)
}

/// Uniform positions inside the frustum pyramid truncated to depths
/// [0.3, 0.8] * depth_max. Deterministic given the seed.
pub fn sample_probe_positions(
    camera: &Camera,
    depth_max: f64,
    n: usize,
    seed: u64,
) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (0.3 * depth_max, 0.8 * depth_max);
    (0..n)
        .map(|_| {
            // depth density proportional to the frustum cross-section d^2
            let u: f64 = rng.gen();
            let d = (a.powi(3) + u * (b.powi(3) - a.powi(3))).cbrt();
            let px = rng.gen_range(0.0..camera.width as f64 - 1.0);
            let py = rng.gen_range(0.0..camera.height as f64 - 1.0);
            camera
                .unproject([px, py], d)
                .expect("depth is positive by construction")
        })
        .collect()
}
