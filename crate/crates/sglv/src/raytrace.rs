//! Differentiable volume ray tracing: front-to-back accumulation of the
//! volume parameters along uniform ray samples, spherical-Gaussian radiance
//! evaluation, full equirect renders, and the analytic adjoint used for
//! fitting.

use crate::equirect::{pixel_to_direction, EquirectMap};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::Vec3;
use crate::volume::{SglvGrid, VolumeConfig};
use rayon::prelude::*;

/// Transmittance below which marching may stop. The neglected tail is
/// bounded by transmittance times the largest voxel value, so this keeps
/// early-out renders within 1e-6 of an exhaustive march for values up to
/// ~100.
pub const EARLY_OUT_TRANSMITTANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct RenderSettings {
    /// Distance between consecutive ray samples.
    pub step: f64,
    /// March length from the probe; samples beyond it are not taken.
    pub max_len: f64,
    /// Upper bound on samples per ray.
    pub max_samples: usize,
    /// Stop once transmittance drops below `EARLY_OUT_TRANSMITTANCE`.
    /// Always treated as false inside gradient computations.
    pub early_out: bool,
}

impl RenderSettings {
    /// Defaults for a volume: step of half the smallest voxel side, marching
    /// the full diagonal, at most 256 samples.
    pub fn for_volume(cfg: &VolumeConfig) -> RenderSettings {
        let step = 0.5 * cfg.voxel_size().min_component();
        RenderSettings { step, max_len: cfg.diagonal(), max_samples: 256, early_out: true }
    }

    pub fn samples(&self) -> usize {
        ((self.max_len / self.step).ceil() as usize).clamp(2, self.max_samples)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.max_len > 0.0) {
            return Err(Error::invalid("render settings need positive step and max_len"));
        }
        Ok(())
    }
}

/// Parameters accumulated along one ray.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayAccum {
    pub color: [f64; 3],
    pub amplitude: [f64; 3],
    pub bandwidth: f64,
    pub axis: Vec3,
}

/// Front-to-back accumulation of all volume parameters along a ray given in
/// volume-frame coordinates.
pub fn accumulate_ray(
    sglv: &SglvGrid,
    origin_vol: Vec3,
    dir_vol: Vec3,
    settings: &RenderSettings,
) -> Result<RayAccum> {
    settings.validate()?;
    if !dir_vol.is_unit(1e-6) {
        return Err(Error::invalid("ray direction must be unit length"));
    }
    Ok(accumulate_ray_unchecked(sglv, origin_vol, dir_vol, settings))
}

fn accumulate_ray_unchecked(
    sglv: &SglvGrid,
    origin_vol: Vec3,
    dir_vol: Vec3,
    settings: &RenderSettings,
) -> RayAccum {
    let mut acc = RayAccum::default();
    let mut trans = 1.0;
    let n = settings.samples();
    for k in 0..n {
        let t = (k as f64 + 0.5) * settings.step;
        if t > settings.max_len {
            break;
        }
        let p = origin_vol + dir_vol * t;
        let taps = match sglv.config.trilinear_taps(p) {
            Some(taps) => taps,
            None => continue,
        };
        let mut a = 0.0;
        let mut c = [0.0; 3];
        let mut w = [0.0; 3];
        let mut lam = 0.0;
        let mut s = [0.0; 3];
        for ([ix, iy, iz], tw) in taps {
            a += tw * sglv.alpha.get(ix, iy, iz, 0);
            lam += tw * sglv.bandwidth.get(ix, iy, iz, 0);
            let cb = sglv.color.voxel_index(ix, iy, iz);
            let wb = sglv.amplitude.voxel_index(ix, iy, iz);
            let sb = sglv.axis.voxel_index(ix, iy, iz);
            for ch in 0..3 {
                c[ch] += tw * sglv.color.data()[cb + ch];
                w[ch] += tw * sglv.amplitude.data()[wb + ch];
                s[ch] += tw * sglv.axis.data()[sb + ch];
            }
        }
        let weight = trans * a;
        for ch in 0..3 {
            acc.color[ch] += weight * c[ch];
            acc.amplitude[ch] += weight * w[ch];
        }
        acc.bandwidth += weight * lam;
        acc.axis += Vec3::new(s[0], s[1], s[2]) * weight;
        trans *= 1.0 - a;
        if settings.early_out && trans < EARLY_OUT_TRANSMITTANCE {
            break;
        }
    }
    acc
}

/// Radiance along `dir` from accumulated parameters: c + w * exp(lambda *
/// (dir . s - 1)), with the accumulated axis used unnormalized.
pub fn eval_radiance(acc: &RayAccum, dir: Vec3) -> [f64; 3] {
    let e = (acc.bandwidth * (dir.dot(acc.axis) - 1.0)).exp();
    [
        acc.color[0] + acc.amplitude[0] * e,
        acc.color[1] + acc.amplitude[1] * e,
        acc.color[2] + acc.amplitude[2] * e,
    ]
}

/// HDR environment map at a world-space probe position. Deterministic and
/// pixel-parallel; directions follow the equirect convention in the volume
/// frame.
pub fn render_envmap(
    sglv: &SglvGrid,
    position_world: Vec3,
    height: usize,
    settings: &RenderSettings,
) -> EquirectMap {
    let origin = sglv.config.world_to_volume(position_world);
    let width = 2 * height;
    let mut map = EquirectMap::zeros(height, 3);
    map.data_mut()
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(row, out)| {
            for col in 0..width {
                let dir = pixel_to_direction(row, col, height);
                let acc = accumulate_ray_unchecked(sglv, origin, dir, settings);
                let rad = eval_radiance(&acc, dir);
                out[col * 3..col * 3 + 3].copy_from_slice(&rad);
            }
        });
    map
}

/// Per-parameter gradient grids, shaped like the volume they refer to.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub color: Grid,
    pub alpha: Grid,
    pub amplitude: Grid,
    pub bandwidth: Grid,
    pub axis: Grid,
}

impl ParamGrads {
    pub fn zeros(cfg: &VolumeConfig) -> ParamGrads {
        let (nx, ny, nz) = (cfg.nx, cfg.ny, cfg.nz);
        ParamGrads {
            color: Grid::zeros(nx, ny, nz, 3),
            alpha: Grid::zeros(nx, ny, nz, 1),
            amplitude: Grid::zeros(nx, ny, nz, 3),
            bandwidth: Grid::zeros(nx, ny, nz, 1),
            axis: Grid::zeros(nx, ny, nz, 3),
        }
    }

    pub fn add_assign(&mut self, o: &ParamGrads) {
        self.color.add_assign(&o.color);
        self.alpha.add_assign(&o.alpha);
        self.amplitude.add_assign(&o.amplitude);
        self.bandwidth.add_assign(&o.bandwidth);
        self.axis.add_assign(&o.axis);
    }

    pub fn scale(&mut self, s: f64) {
        self.color.scale(s);
        self.alpha.scale(s);
        self.amplitude.scale(s);
        self.bandwidth.scale(s);
        self.axis.scale(s);
    }
}

struct SampleRec {
    taps: [([usize; 3], f64); 8],
    trans: f64,
    alpha: f64,
    // c0..c2, w0..w2, lambda, s0..s2
    vals: [f64; 10],
}

const N_COMP: usize = 10;

fn backprop_ray(
    sglv: &SglvGrid,
    origin: Vec3,
    dir: Vec3,
    settings: &RenderSettings,
    upstream: [f64; 3],
    grads: &mut ParamGrads,
) {
    // forward pass, recording every in-volume sample; early-out is always
    // disabled here so gradients match an exhaustive march
    let mut samples: Vec<SampleRec> = Vec::new();
    let mut trans = 1.0;
    let mut acc = RayAccum::default();
    let n = settings.samples();
    for k in 0..n {
        let t = (k as f64 + 0.5) * settings.step;
        if t > settings.max_len {
            break;
        }
        let p = origin + dir * t;
        let taps = match sglv.config.trilinear_taps(p) {
            Some(taps) => taps,
            None => continue,
        };
        let mut a = 0.0;
        let mut vals = [0.0; N_COMP];
        for ([ix, iy, iz], tw) in taps {
            a += tw * sglv.alpha.get(ix, iy, iz, 0);
            vals[6] += tw * sglv.bandwidth.get(ix, iy, iz, 0);
            let cb = sglv.color.voxel_index(ix, iy, iz);
            let wb = sglv.amplitude.voxel_index(ix, iy, iz);
            let sb = sglv.axis.voxel_index(ix, iy, iz);
            for ch in 0..3 {
                vals[ch] += tw * sglv.color.data()[cb + ch];
                vals[3 + ch] += tw * sglv.amplitude.data()[wb + ch];
                vals[7 + ch] += tw * sglv.axis.data()[sb + ch];
            }
        }
        let weight = trans * a;
        for ch in 0..3 {
            acc.color[ch] += weight * vals[ch];
            acc.amplitude[ch] += weight * vals[3 + ch];
        }
        acc.bandwidth += weight * vals[6];
        acc.axis += Vec3::new(vals[7], vals[8], vals[9]) * weight;
        samples.push(SampleRec { taps, trans, alpha: a, vals });
        trans *= 1.0 - a;
    }

    // chain the upstream pixel gradient through the radiance formula to the
    // ten accumulated components
    let ds = dir.dot(acc.axis) - 1.0;
    let e = (acc.bandwidth * ds).exp();
    let gw_dot: f64 = (0..3).map(|ch| upstream[ch] * acc.amplitude[ch]).sum();
    let mut g_acc = [0.0; N_COMP];
    for ch in 0..3 {
        g_acc[ch] = upstream[ch]; // d/dc
        g_acc[3 + ch] = upstream[ch] * e; // d/dw
    }
    g_acc[6] = gw_dot * e * ds; // d/dlambda
    let gs = gw_dot * e * acc.bandwidth;
    g_acc[7] = gs * dir.x;
    g_acc[8] = gs * dir.y;
    g_acc[9] = gs * dir.z;

    // reverse compositing: with B_i = a_i x_i + (1 - a_i) B_{i+1},
    // dA/dx_i = T_i a_i and dA/da_i = T_i (x_i - B_{i+1})
    let mut b_next = [0.0; N_COMP];
    for rec in samples.iter().rev() {
        let mut g_alpha = 0.0;
        let mut g_vals = [0.0; N_COMP];
        for comp in 0..N_COMP {
            g_vals[comp] = g_acc[comp] * rec.trans * rec.alpha;
            g_alpha += g_acc[comp] * rec.trans * (rec.vals[comp] - b_next[comp]);
        }
        for ([ix, iy, iz], tw) in rec.taps {
            if tw == 0.0 {
                continue;
            }
            let ai = grads.alpha.voxel_index(ix, iy, iz);
            grads.alpha.data_mut()[ai] += tw * g_alpha;
            let li = grads.bandwidth.voxel_index(ix, iy, iz);
            grads.bandwidth.data_mut()[li] += tw * g_vals[6];
            let cb = grads.color.voxel_index(ix, iy, iz);
            let wb = grads.amplitude.voxel_index(ix, iy, iz);
            let sb = grads.axis.voxel_index(ix, iy, iz);
            for ch in 0..3 {
                grads.color.data_mut()[cb + ch] += tw * g_vals[ch];
                grads.amplitude.data_mut()[wb + ch] += tw * g_vals[3 + ch];
                grads.axis.data_mut()[sb + ch] += tw * g_vals[7 + ch];
            }
        }
        for comp in 0..N_COMP {
            b_next[comp] = rec.alpha * rec.vals[comp] + (1.0 - rec.alpha) * b_next[comp];
        }
    }
}

/// Reverse-mode derivatives of a scalar loss through a full envmap render.
/// `upstream` holds dLoss/dL per pixel and channel. Early-out is disabled
/// internally. Deterministic regardless of thread count: row chunks are
/// reduced in fixed order.
pub fn backprop_envmap(
    sglv: &SglvGrid,
    position_world: Vec3,
    settings: &RenderSettings,
    upstream: &EquirectMap,
) -> Result<ParamGrads> {
    if upstream.channels != 3 {
        return Err(Error::shape("upstream gradient map must have 3 channels"));
    }
    settings.validate()?;
    let origin = sglv.config.world_to_volume(position_world);
    let height = upstream.height;
    let width = upstream.width();

    let n_chunks = 8usize.min(height).max(1);
    let chunk = height.div_ceil(n_chunks);
    let partials: Vec<ParamGrads> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut grads = ParamGrads::zeros(&sglv.config);
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(height);
            for row in lo..hi {
                for col in 0..width {
                    let g = [
                        upstream.get(row, col, 0),
                        upstream.get(row, col, 1),
                        upstream.get(row, col, 2),
                    ];
                    if g == [0.0, 0.0, 0.0] {
                        continue;
                    }
                    let dir = pixel_to_direction(row, col, height);
                    backprop_ray(sglv, origin, dir, settings, g, &mut grads);
                }
            }
            grads
        })
        .collect();

    let mut total = ParamGrads::zeros(&sglv.config);
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}

/// Loss whose gradient `envmap_loss_gradients` propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradLoss {
    /// Mean over pixels and channels of (log(pred+1) - log(target+1))^2.
    LogL2,
    /// Mean squared difference.
    L2,
}

/// Renders the map at `position_world`, evaluates the selected loss against
/// `target`, and returns the loss with exact parameter gradients.
pub fn envmap_loss_gradients(
    sglv: &SglvGrid,
    position_world: Vec3,
    target: &EquirectMap,
    settings: &RenderSettings,
    loss: GradLoss,
) -> Result<(f64, ParamGrads)> {
    if target.channels != 3 {
        return Err(Error::shape("target must be a 3-channel map"));
    }
    let mut exact = *settings;
    exact.early_out = false;
    let pred = render_envmap(sglv, position_world, target.height, &exact);
    let (loss_val, upstream) = loss_and_upstream(&pred, target, loss)?;
    let grads = backprop_envmap(sglv, position_world, &exact, &upstream)?;
    Ok((loss_val, grads))
}

/// Loss value and dLoss/dpred for the selected loss.
pub fn loss_and_upstream(
    pred: &EquirectMap,
    target: &EquirectMap,
    loss: GradLoss,
) -> Result<(f64, EquirectMap)> {
    if !pred.same_shape(target) {
        return Err(Error::shape("prediction and target maps differ in shape"));
    }
    let n = pred.data().len() as f64;
    let mut upstream = EquirectMap::zeros(pred.height, 3);
    let mut total = 0.0;
    for ((u, p), t) in upstream
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        match loss {
            GradLoss::LogL2 => {
                let d = (p + 1.0).ln() - (t + 1.0).ln();
                total += d * d;
                *u = 2.0 * d / ((p + 1.0) * n);
            }
            GradLoss::L2 => {
                let d = p - t;
                total += d * d;
                *u = 2.0 * d / n;
            }
        }
    }
    Ok((total / n, upstream))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::math::Frame;
    use crate::volume::VolumeConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box_cfg(n: usize) -> VolumeConfig {
        VolumeConfig::custom(
            [0.0, 1.0],
            [0.0, 1.0],
            [0.0, 1.0],
            n,
            n,
            n,
            Frame::identity(),
        )
        .unwrap()
    }

    pub(crate) fn random_volume(n: usize, seed: u64) -> SglvGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vol = SglvGrid::empty(unit_box_cfg(n));
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
        vol.validate().unwrap();
        vol
    }

    /// Straightforward reference march: trilinear lookups per sample and the
    /// textbook compositing sum, no early-out, no shortcuts. Kept separate
    /// from the production path on purpose.
    pub(crate) fn naive_ray_reference(
        sglv: &SglvGrid,
        origin: Vec3,
        dir: Vec3,
        settings: &RenderSettings,
    ) -> [f64; 3] {
        let n = settings.samples();
        let mut alphas = Vec::new();
        let mut vals: Vec<[f64; 10]> = Vec::new();
        for k in 0..n {
            let t = (k as f64 + 0.5) * settings.step;
            if t > settings.max_len {
                break;
            }
            let p = origin + dir * t;
            let a = sglv.config.trilinear(&sglv.alpha, p)[0];
            let c = sglv.config.trilinear(&sglv.color, p);
            let w = sglv.config.trilinear(&sglv.amplitude, p);
            let l = sglv.config.trilinear(&sglv.bandwidth, p)[0];
            let s = sglv.config.trilinear(&sglv.axis, p);
            alphas.push(a);
            vals.push([c[0], c[1], c[2], w[0], w[1], w[2], l, s[0], s[1], s[2]]);
        }
        let mut acc = [0.0f64; 10];
        for i in 0..alphas.len() {
            let mut t_i = 1.0;
            for a in alphas.iter().take(i) {
                t_i *= 1.0 - a;
            }
            for comp in 0..10 {
                acc[comp] += alphas[i] * vals[i][comp] * t_i;
            }
        }
        let sdot = dir.x * acc[7] + dir.y * acc[8] + dir.z * acc[9];
        let e = (acc[6] * (sdot - 1.0)).exp();
        [acc[0] + acc[3] * e, acc[1] + acc[4] * e, acc[2] + acc[5] * e]
    }

    #[test]
    fn empty_volume_accumulates_nothing() {
        let vol = SglvGrid::empty(unit_box_cfg(4));
        let s = RenderSettings::for_volume(&vol.config);
        let acc = accumulate_ray(&vol, Vec3::new(0.5, 0.5, 0.0), Vec3::new(0.0, 0.0, 1.0), &s)
            .unwrap();
        assert_eq!(acc.color, [0.0; 3]);
        assert_eq!(acc.amplitude, [0.0; 3]);
        assert_eq!(acc.bandwidth, 0.0);
        let map = render_envmap(&vol, Vec3::new(0.5, 0.5, 0.5), 8, &s);
        assert!(map.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn opaque_first_sample_collapses_transmittance() {
        let mut vol = SglvGrid::empty(unit_box_cfg(2));
        for v in vol.alpha.data_mut() {
            *v = 1.0;
        }
        for v in vol.color.data_mut() {
            *v = 0.4;
        }
        for v in vol.amplitude.data_mut() {
            *v = 0.2;
        }
        for v in vol.bandwidth.data_mut() {
            *v = 3.0;
        }
        let s = RenderSettings { step: 0.1, max_len: 2.0, max_samples: 64, early_out: false };
        let acc = accumulate_ray(&vol, Vec3::new(0.5, 0.5, 0.3), Vec3::new(0.0, 0.0, 1.0), &s)
            .unwrap();
        assert!((acc.color[0] - 0.4).abs() < 1e-12);
        assert!((acc.amplitude[1] - 0.2).abs() < 1e-12);
        assert!((acc.bandwidth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_half_opaque_samples() {
        let cfg = VolumeConfig::custom(
            [0.0, 1.0],
            [0.0, 1.0],
            [0.0, 2.0],
            1,
            1,
            2,
            Frame::identity(),
        )
        .unwrap();
        let mut vol = SglvGrid::empty(cfg);
        vol.alpha.data_mut().fill(0.5);
        vol.color.set_vec(0, 0, 0, [1.0, 2.0, 3.0]);
        vol.color.set_vec(0, 0, 1, [10.0, 20.0, 30.0]);
        // samples land exactly on the two voxel centers
        let s = RenderSettings { step: 1.0, max_len: 2.0, max_samples: 2, early_out: false };
        let acc = accumulate_ray(&vol, Vec3::new(0.5, 0.5, 0.0), Vec3::new(0.0, 0.0, 1.0), &s)
            .unwrap();
        for ch in 0..3 {
            let x1 = [1.0, 2.0, 3.0][ch];
            let x2 = [10.0, 20.0, 30.0][ch];
            assert!((acc.color[ch] - (0.5 * x1 + 0.25 * x2)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let vol = SglvGrid::empty(unit_box_cfg(2));
        let s = RenderSettings::for_volume(&vol.config);
        assert!(accumulate_ray(&vol, Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), &s).is_err());
    }

    #[test]
    fn eval_radiance_formula_cases() {
        // zero bandwidth: direction independent, L = c + w
        let acc = RayAccum {
            color: [0.3, 0.2, 0.1],
            amplitude: [0.5, 0.6, 0.7],
            bandwidth: 0.0,
            axis: Vec3::new(0.0, 0.0, 1.0),
        };
        for d in [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, -1.0, 0.0)] {
            let r = eval_radiance(&acc, d);
            for ch in 0..3 {
                assert!((r[ch] - 0.8).abs() < 1e-15);
            }
        }
        // dir aligned with a unit axis: exponent vanishes
        let acc = RayAccum {
            color: [0.1; 3],
            amplitude: [0.4, 0.5, 0.6],
            bandwidth: 7.0,
            axis: Vec3::new(0.0, 1.0, 0.0),
        };
        let r = eval_radiance(&acc, Vec3::new(0.0, 1.0, 0.0));
        assert!((r[0] - 0.5).abs() < 1e-12);
        assert!((r[2] - 0.7).abs() < 1e-12);
        // perpendicular direction with lambda = 10
        let acc = RayAccum {
            color: [0.1; 3],
            amplitude: [1.0, 0.0, 0.0],
            bandwidth: 10.0,
            axis: Vec3::new(0.0, 0.0, 1.0),
        };
        let r = eval_radiance(&acc, Vec3::new(1.0, 0.0, 0.0));
        assert!((r[0] - (0.1 + (-10.0f64).exp())).abs() < 1e-15);
        assert_eq!(r[1], 0.1);
        assert_eq!(r[2], 0.1);
    }

    #[test]
    fn matches_naive_reference_on_random_volumes() {
        for seed in 0..5 {
            let vol = random_volume(4, seed);
            let s = RenderSettings { step: 0.11, max_len: 2.0, max_samples: 16, early_out: false };
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for _ in 0..30 {
                let o = Vec3::new(
                    rng.gen_range(-0.2..1.2),
                    rng.gen_range(-0.2..1.2),
                    rng.gen_range(-0.2..1.2),
                );
                let d = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .try_normalized()
                .unwrap_or(Vec3::new(0.0, 0.0, 1.0));
                let acc = accumulate_ray(&vol, o, d, &s).unwrap();
                let rad = eval_radiance(&acc, d);
                let want = naive_ray_reference(&vol, o, d, &s);
                for ch in 0..3 {
                    assert!((rad[ch] - want[ch]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn early_out_stays_close_to_exhaustive() {
        let vol = random_volume(8, 42);
        let mut s = RenderSettings::for_volume(&vol.config);
        s.early_out = true;
        let a = render_envmap(&vol, Vec3::new(0.5, 0.5, 0.5), 16, &s);
        s.early_out = false;
        let b = render_envmap(&vol, Vec3::new(0.5, 0.5, 0.5), 16, &s);
        let max_diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-6, "early-out error {max_diff}");
    }

    #[test]
    fn single_bright_voxel_support() {
        let n = 8;
        let mut vol = SglvGrid::empty(unit_box_cfg(n));
        let vi = [4usize, 3, 5];
        vol.alpha.set(vi[0], vi[1], vi[2], 0, 1.0);
        vol.color.set_vec(vi[0], vi[1], vi[2], [5.0, 5.0, 5.0]);
        let probe = Vec3::new(0.5, 0.5, 0.5);
        let s = RenderSettings::for_volume(&vol.config);
        let height = 16;
        let map = render_envmap(&vol, probe, height, &s);

        // geometric oracle: a pixel is lit iff some sample point has positive
        // trilinear weight for the bright voxel, i.e. it lies strictly within
        // one voxel side of the center on every axis (interior voxel, no
        // border clamping involved)
        let side = 1.0 / n as f64;
        let center = vol.config.voxel_center(vi[0], vi[1], vi[2]);
        for row in 0..height {
            for col in 0..2 * height {
                let dir = pixel_to_direction(row, col, height);
                let mut lit = false;
                for k in 0..s.samples() {
                    let t = (k as f64 + 0.5) * s.step;
                    if t > s.max_len {
                        break;
                    }
                    let p = probe + dir * t;
                    if !vol.config.contains(p) {
                        continue;
                    }
                    if (p.x - center.x).abs() < side
                        && (p.y - center.y).abs() < side
                        && (p.z - center.z).abs() < side
                    {
                        lit = true;
                        break;
                    }
                }
                let got = map.get3(row, col)[0] > 0.0;
                assert_eq!(got, lit, "pixel ({row},{col})");
            }
        }
    }

    #[test]
    fn occluder_blocks_radiance() {
        // bright slab at z = high, opaque dark wall in the middle of the box,
        // probes on either side of the wall along z
        let n = 8;
        let mut vol = SglvGrid::empty(unit_box_cfg(n));
        for iy in 0..n {
            for ix in 0..n {
                vol.alpha.set(ix, iy, 7, 0, 1.0);
                vol.color.set_vec(ix, iy, 7, [10.0, 10.0, 10.0]);
                vol.alpha.set(ix, iy, 4, 0, 1.0); // dark occluder
            }
        }
        let s = RenderSettings::for_volume(&vol.config);
        let toward_light = Vec3::new(0.0, 0.0, 1.0);
        let near = accumulate_ray(&vol, Vec3::new(0.5, 0.5, 0.7), toward_light, &s).unwrap();
        let near_rad = eval_radiance(&near, toward_light);
        let far = accumulate_ray(&vol, Vec3::new(0.5, 0.5, 0.2), toward_light, &s).unwrap();
        let far_rad = eval_radiance(&far, toward_light);
        assert!(near_rad[0] > 5.0);
        assert!(far_rad[0] < near_rad[0] * 0.2, "occluded {far_rad:?} vs open {near_rad:?}");
    }

    #[test]
    fn nonnegative_volume_gives_nonnegative_radiance() {
        let vol = random_volume(4, 9);
        let s = RenderSettings::for_volume(&vol.config);
        let map = render_envmap(&vol, Vec3::new(0.4, 0.6, 0.5), 12, &s);
        assert!(map.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn probe_motion_is_continuous() {
        // smooth blob volume; sup-norm map difference should scale ~linearly
        // with probe displacement
        let n = 8;
        let mut vol = SglvGrid::empty(unit_box_cfg(n));
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let c = vol.config.voxel_center(ix, iy, iz);
                    let r2 = (c - Vec3::new(0.5, 0.5, 0.5)).norm_sq();
                    vol.alpha.set(ix, iy, iz, 0, 0.6 * (-6.0 * r2).exp());
                    let col = 0.8 * (-4.0 * r2).exp();
                    vol.color.set_vec(ix, iy, iz, [col, col * 0.5, col * 0.25]);
                }
            }
        }
        let s = RenderSettings { step: 0.02, max_len: 2.0, max_samples: 128, early_out: false };
        let side = 1.0 / n as f64;
        let base = Vec3::new(0.45, 0.5, 0.5);
        let mut diffs = Vec::new();
        let deltas = [0.1 * side, 0.05 * side, 0.025 * side];
        let m0 = render_envmap(&vol, base, 8, &s);
        for d in deltas {
            let m1 = render_envmap(&vol, base + Vec3::new(d, 0.0, 0.0), 8, &s);
            let sup = m0
                .data()
                .iter()
                .zip(m1.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            diffs.push(sup);
        }
        // log-log slope between first and last delta
        let slope = (diffs[0] / diffs[2]).ln() / (deltas[0] / deltas[2]).ln();
        assert!((0.7..=1.3).contains(&slope), "slope {slope}, diffs {diffs:?}");
    }

    #[test]
    fn render_is_deterministic_across_thread_counts() {
        let vol = random_volume(6, 11);
        let s = RenderSettings::for_volume(&vol.config);
        let render = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render_envmap(&vol, Vec3::new(0.5, 0.5, 0.5), 16, &s))
        };
        let a = render(1);
        let b = render(4);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn gradients_zero_at_target() {
        let vol = random_volume(4, 21);
        let s = RenderSettings::for_volume(&vol.config);
        let pos = Vec3::new(0.5, 0.5, 0.5);
        let target = render_envmap(&vol, pos, 8, &s);
        let (loss, grads) = envmap_loss_gradients(&vol, pos, &target, &s, GradLoss::LogL2).unwrap();
        assert!(loss.abs() < 1e-15);
        for g in [&grads.color, &grads.alpha, &grads.amplitude, &grads.bandwidth, &grads.axis] {
            assert!(g.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn single_voxel_gradient_matches_hand_chain_rule() {
        // one voxel, one probe direction; derivative of the log-L2 loss with
        // respect to c, w, lambda derived by hand for a single-sample ray
        let cfg = VolumeConfig::custom(
            [0.0, 1.0],
            [0.0, 1.0],
            [0.0, 1.0],
            1,
            1,
            1,
            Frame::identity(),
        )
        .unwrap();
        let mut vol = SglvGrid::empty(cfg);
        let (a, c, w, lam) = (0.5, 0.3, 0.7, 2.0);
        vol.alpha.data_mut()[0] = a;
        vol.color.set_vec(0, 0, 0, [c, c, c]);
        vol.amplitude.set_vec(0, 0, 0, [w, w, w]);
        vol.bandwidth.data_mut()[0] = lam;
        // axis = +z; march one sample straight through the voxel center
        let s = RenderSettings { step: 1.0, max_len: 1.0, max_samples: 2, early_out: false };
        let dir = Vec3::new(0.0, 0.0, 1.0);
        // single pixel target: use a 1-pixel-equivalent via upstream of ones
        let probe = Vec3::new(0.5, 0.5, 0.0);
        let acc = accumulate_ray(&vol, probe, dir, &s).unwrap();
        // accumulated: x * a for each parameter; axis accum = (0,0,a)
        assert!((acc.color[0] - a * c).abs() < 1e-12);
        let mut grads = ParamGrads::zeros(&vol.config);
        backprop_ray(&vol, probe, dir, &s, [1.0, 0.0, 0.0], &mut grads);
        // L0 = a*c + a*w * exp(a*lam * (dir . (0,0,a) - 1)) with dir.z = 1
        let e = (a * lam * (a - 1.0)).exp();
        // dL0/dc_voxel = a
        assert!((grads.color.data()[0] - a).abs() < 1e-10);
        // dL0/dw_voxel = a * e
        assert!((grads.amplitude.data()[0] - a * e).abs() < 1e-10);
        // dL0/dlam_voxel = a*w * e * (a*(a-1)) -- chain through accumulated lambda
        let want_lam = a * w * e * (a - 1.0) * a;
        assert!((grads.bandwidth.data()[0] - want_lam).abs() < 1e-10);
        // dL0/ds_z: accumulated s_z = a*s_z, dL0/d(acc s_z) = a*w*e*lam*dir_z
        let want_sz = a * w * e * (a * lam) * a;
        assert!((grads.axis.data()[2] - want_sz).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let vol = random_volume(4, 1);
        let s = RenderSettings::for_volume(&vol.config);
        let target = EquirectMap::zeros(8, 1);
        assert!(envmap_loss_gradients(&vol, Vec3::new(0.5, 0.5, 0.5), &target, &s, GradLoss::LogL2).is_err());
    }
}
