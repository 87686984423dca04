//! Partial scene mesh from one RGBD frame and ray-cast partial panoramas:
//! detailed LDR color, visibility mask and depth, all as equirect maps.

use crate::camera::Camera;
use crate::equirect::{pixel_to_direction, EquirectMap};
use crate::error::{Error, Result};
use crate::image::{DepthMap, HdrImage};
use crate::math::{Frame, Vec3};
use rayon::prelude::*;

/// Depth written where a panorama ray hits nothing.
pub const UNSEEN_DEPTH: f64 = f64::INFINITY;

/// Triangle mesh over the valid pixels of a depth map, textured with the
/// clamped (LDR) input image, plus a BVH for ray queries.
#[derive(Debug, Clone)]
pub struct PartialMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    bvh: Bvh,
}

impl PartialMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// Unprojects every valid depth pixel, connects 2x2 neighborhoods into two
/// triangles, and drops any triangle whose vertex depths differ by more than
/// `gap_threshold` relative (max/min - 1), so depth discontinuities stay
/// open instead of becoming rubber sheets.
pub fn build_partial_mesh(
    camera: &Camera,
    depth: &DepthMap,
    image: &HdrImage,
    gap_threshold: f64,
) -> Result<PartialMesh> {
    if depth.width != image.width || depth.height != image.height {
        return Err(Error::shape("depth and image resolutions differ"));
    }
    let (w, h) = (depth.width, depth.height);
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut depths = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let Some(d) = depth.get(x, y) {
                index[y * w + x] = vertices.len() as u32;
                vertices.push(camera.unproject([x as f64, y as f64], d)?);
                let c = image.get(x, y);
                colors.push([c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]);
                depths.push(d);
            }
        }
    }
    let mut triangles = Vec::new();
    let mut push_tri = |a: u32, b: u32, c: u32| {
        let (da, db, dc) = (depths[a as usize], depths[b as usize], depths[c as usize]);
        let lo = da.min(db).min(dc);
        let hi = da.max(db).max(dc);
        if hi / lo - 1.0 <= gap_threshold {
            triangles.push([a, b, c]);
        }
    };
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let v00 = index[y * w + x];
            let v10 = index[y * w + x + 1];
            let v01 = index[(y + 1) * w + x];
            let v11 = index[(y + 1) * w + x + 1];
            if v00 == u32::MAX || v10 == u32::MAX || v01 == u32::MAX || v11 == u32::MAX {
                continue;
            }
            push_tri(v00, v10, v01);
            push_tri(v10, v11, v01);
        }
    }
    let bvh = Bvh::build(&vertices, &triangles);
    Ok(PartialMesh { vertices, colors, triangles, bvh })
}

/// The three aligned partial panoramas rendered from a probe position.
#[derive(Debug, Clone)]
pub struct PanoBundle {
    /// LDR detail color; zero where the mask is zero.
    pub color: EquirectMap,
    /// 1 where a mesh hit exists, else 0.
    pub mask: EquirectMap,
    /// Hit distance in scene units; `UNSEEN_DEPTH` where the mask is zero.
    pub depth: EquirectMap,
}

/// Nearest-hit ray cast of the mesh over an equirect panorama. Pixel
/// directions follow the shared equirect convention in `frame` (the volume
/// frame), so the bundle aligns pixelwise with volume renders.
pub fn render_partial_pano(
    mesh: &PartialMesh,
    position: Vec3,
    height: usize,
    frame: &Frame,
) -> PanoBundle {
    let width = 2 * height;
    let mut color = EquirectMap::zeros(height, 3);
    let mut mask = EquirectMap::zeros(height, 1);
    let mut depth = EquirectMap::filled(height, 1, UNSEEN_DEPTH);

    let rows: Vec<Vec<Option<(f64, [f64; 3])>>> = (0..height)
        .into_par_iter()
        .map(|row| {
            (0..width)
                .map(|col| {
                    let dir = frame.dir_to_world(pixel_to_direction(row, col, height));
                    mesh.bvh.intersect(mesh, position, dir).map(|hit| {
                        let [a, b, c] = mesh.triangles[hit.tri];
                        let (ca, cb, cc) = (
                            mesh.colors[a as usize],
                            mesh.colors[b as usize],
                            mesh.colors[c as usize],
                        );
                        let w0 = 1.0 - hit.u - hit.v;
                        let mut col3 = [0.0; 3];
                        for ch in 0..3 {
                            col3[ch] = w0 * ca[ch] + hit.u * cb[ch] + hit.v * cc[ch];
                        }
                        (hit.t, col3)
                    })
                })
                .collect()
        })
        .collect();
    for (row, cells) in rows.iter().enumerate() {
        for (col, cell) in cells.iter().enumerate() {
            if let Some((t, c)) = cell {
                color.set3(row, col, *c);
                mask.set(row, col, 0, 1.0);
                depth.set(row, col, 0, *t);
            }
        }
    }
    PanoBundle { color, mask, depth }
}

struct Hit {
    tri: usize,
    t: f64,
    u: f64,
    v: f64,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Aabb {
        Aabb { lo: Vec3::splat(f64::INFINITY), hi: Vec3::splat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = Vec3::new(self.lo.x.min(p.x), self.lo.y.min(p.y), self.lo.z.min(p.z));
        self.hi = Vec3::new(self.hi.x.max(p.x), self.hi.y.max(p.y), self.hi.z.max(p.z));
    }

    fn merge(&mut self, o: &Aabb) {
        self.grow(o.lo);
        self.grow(o.hi);
    }

    /// Slab test; returns true if the ray enters the box before `t_max`.
    fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for axis in 0..3 {
            let (o, inv, lo, hi) = match axis {
                0 => (origin.x, inv_dir.x, self.lo.x, self.hi.x),
                1 => (origin.y, inv_dir.y, self.lo.y, self.hi.y),
                _ => (origin.z, inv_dir.z, self.lo.z, self.hi.z),
            };
            let (mut a, mut b) = ((lo - o) * inv, (hi - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: range into `order`; inner: left child is node+1, right is this.
    left_or_start: usize,
    count: usize, // 0 for inner nodes; then left_or_start is the right child
}

/// Median-split bounding volume hierarchy over triangle centroids.
#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    fn build(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Bvh {
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::new();
        if triangles.is_empty() {
            return Bvh { nodes, order };
        }
        let tri_bounds: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for i in t {
                    b.grow(vertices[*i as usize]);
                }
                b
            })
            .collect();
        let centroids: Vec<Vec3> = tri_bounds
            .iter()
            .map(|b| (b.lo + b.hi) * 0.5)
            .collect();
        build_node(&mut nodes, &mut order, &tri_bounds, &centroids, 0, triangles.len());
        Bvh { nodes, order }
    }

    fn intersect(&self, mesh: &PartialMesh, origin: Vec3, dir: Vec3) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut best_t = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds.hit(origin, inv_dir, best_t) {
                continue;
            }
            if node.count > 0 {
                for oi in node.left_or_start..node.left_or_start + node.count {
                    let tri = self.order[oi];
                    let [a, b, c] = mesh.triangles[tri];
                    if let Some((t, u, v)) = ray_triangle(
                        origin,
                        dir,
                        mesh.vertices[a as usize],
                        mesh.vertices[b as usize],
                        mesh.vertices[c as usize],
                    ) {
                        if t < best_t {
                            best_t = t;
                            best = Some(Hit { tri, t, u, v });
                        }
                    }
                }
            } else {
                stack.push(ni + 1);
                stack.push(node.left_or_start);
            }
        }
        best
    }
}

fn build_node(
    nodes: &mut Vec<BvhNode>,
    order: &mut [usize],
    tri_bounds: &[Aabb],
    centroids: &[Vec3],
    start: usize,
    end: usize,
) -> usize {
    let mut bounds = Aabb::empty();
    for &tri in &order[start..end] {
        bounds.merge(&tri_bounds[tri]);
    }
    let node_index = nodes.len();
    nodes.push(BvhNode { bounds, left_or_start: start, count: end - start });
    if end - start <= LEAF_SIZE {
        return node_index;
    }
    // split at the centroid median of the widest axis
    let mut cb = Aabb::empty();
    for &tri in &order[start..end] {
        cb.grow(centroids[tri]);
    }
    let extent = cb.hi - cb.lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let key = |tri: usize| match axis {
        0 => centroids[tri].x,
        1 => centroids[tri].y,
        _ => centroids[tri].z,
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |a, b| {
        key(*a).partial_cmp(&key(*b)).unwrap()
    });
    build_node(nodes, order, tri_bounds, centroids, start, mid);
    let right = build_node(nodes, order, tri_bounds, centroids, mid, end);
    nodes[node_index].left_or_start = right;
    nodes[node_index].count = 0;
    node_index
}

/// Moller-Trumbore; returns (t, u, v) for hits with t > 1e-9.
fn ray_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t > 1e-9 {
        Some((t, u, v))
    } else {
        None
    }
}
