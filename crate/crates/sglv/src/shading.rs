//! Monte-Carlo shading of a glossy probe sphere under an environment map:
//! GGX/Smith/Schlick microfacet BRDF, importance and uniform sampling, and
//! the environment-gradient pass used by the render loss.

use crate::equirect::EquirectMap;
use crate::error::{Error, Result};
use crate::image::HdrImage;
use crate::math::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Schlick Fresnel reflectance at normal incidence (dielectric).
pub const F0: f64 = 0.04;

/// GGX microfacet surface with a Lambertian base.
///
/// `specular_mix` is the probability of sampling the GGX lobe instead of the
/// cosine lobe. A mix of exactly 0 means a pure Lambertian surface: the
/// specular lobe is dropped from evaluation too, not just from sampling.
#[derive(Debug, Clone, Copy)]
pub struct MicrofacetBrdf {
    pub albedo: [f64; 3],
    pub roughness: f64,
    pub specular_mix: f64,
}

impl Default for MicrofacetBrdf {
    fn default() -> Self {
        MicrofacetBrdf { albedo: [0.8; 3], roughness: 0.2, specular_mix: 0.5 }
    }
}

impl MicrofacetBrdf {
    pub fn diffuse(albedo: [f64; 3]) -> MicrofacetBrdf {
        MicrofacetBrdf { albedo, roughness: 1.0, specular_mix: 0.0 }
    }

    fn alpha2(&self) -> f64 {
        let a = self.roughness * self.roughness;
        a * a
    }

    /// BRDF value f(l, v); zero below the horizon.
    pub fn eval(&self, n: Vec3, v: Vec3, l: Vec3) -> [f64; 3] {
        let nl = n.dot(l);
        let nv = n.dot(v);
        if nl <= 0.0 || nv <= 0.0 {
            return [0.0; 3];
        }
        let diff = [self.albedo[0] / PI, self.albedo[1] / PI, self.albedo[2] / PI];
        if self.specular_mix == 0.0 {
            return diff;
        }
        let h = match (v + l).try_normalized() {
            Some(h) => h,
            None => return diff,
        };
        let nh = n.dot(h).max(0.0);
        let vh = v.dot(h).max(1e-9);
        let a2 = self.alpha2();
        let d = {
            let t = nh * nh * (a2 - 1.0) + 1.0;
            a2 / (PI * t * t)
        };
        let g1 = |x: f64| 2.0 * x / (x + (a2 + (1.0 - a2) * x * x).sqrt());
        let g = g1(nv) * g1(nl);
        let fr = F0 + (1.0 - F0) * (1.0 - vh).powi(5);
        let spec = d * g * fr / (4.0 * nv * nl);
        [diff[0] + spec, diff[1] + spec, diff[2] + spec]
    }

    /// Exact density of `sample` for the direction l.
    pub fn pdf(&self, n: Vec3, v: Vec3, l: Vec3) -> f64 {
        let nl = n.dot(l);
        let p_cos = if nl > 0.0 { nl / PI } else { 0.0 };
        if self.specular_mix == 0.0 {
            return p_cos;
        }
        let p_ggx = match (v + l).try_normalized() {
            Some(h) => {
                let nh = n.dot(h);
                let vh = v.dot(h);
                if nh > 0.0 && vh > 1e-9 {
                    let a2 = self.alpha2();
                    let t = nh * nh * (a2 - 1.0) + 1.0;
                    (a2 / (PI * t * t)) * nh / (4.0 * vh)
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        (1.0 - self.specular_mix) * p_cos + self.specular_mix * p_ggx
    }

    /// Draws a light direction from the cosine/GGX mixture. Always consumes
    /// exactly three RNG values so streams stay aligned across calls.
    /// None when the drawn direction has negligible density.
    pub fn sample(&self, n: Vec3, v: Vec3, rng: &mut impl Rng) -> Option<(Vec3, f64)> {
        let pick: f64 = rng.gen();
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let (t, b) = orthonormal_basis(n);
        let phi = 2.0 * PI * u2;
        let l = if pick < self.specular_mix {
            let a2 = self.alpha2();
            let cos_h = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).sqrt();
            let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
            let h = t * (sin_h * phi.cos()) + b * (sin_h * phi.sin()) + n * cos_h;
            h * (2.0 * v.dot(h)) - v
        } else {
            let r = u1.sqrt();
            t * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - u1).max(0.0).sqrt()
        };
        let l = l.try_normalized()?;
        let pdf = self.pdf(n, v, l);
        if pdf > 1e-12 {
            Some((l, pdf))
        } else {
            None
        }
    }
}

fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let t = n.cross(a).normalized();
    let b = n.cross(t);
    (t, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// BRDF mixture sampling.
    Importance,
    /// Uniform theta-phi sampling of the whole sphere, pdf 1/(2 pi^2 sin t).
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub struct SphereRenderSpec {
    pub resolution: usize,
    pub spp: usize,
    pub mode: SampleMode,
    pub seed: u64,
}

impl Default for SphereRenderSpec {
    fn default() -> Self {
        SphereRenderSpec { resolution: 128, spp: 128, mode: SampleMode::Importance, seed: 0 }
    }
}

impl SphereRenderSpec {
    fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.spp == 0 {
            return Err(Error::invalid("sphere render needs resolution and spp >= 1"));
        }
        Ok(())
    }
}

/// Outward normal of the orthographic unit sphere at a pixel center, or None
/// outside the disk. x grows right, y grows up.
fn sphere_pixel_normal(px: usize, py: usize, res: usize) -> Option<Vec3> {
    let x = 2.0 * (px as f64 + 0.5) / res as f64 - 1.0;
    let y = 1.0 - 2.0 * (py as f64 + 0.5) / res as f64;
    let r2 = x * x + y * y;
    if r2 >= 1.0 {
        return None;
    }
    Some(Vec3::new(x, y, (1.0 - r2).sqrt()))
}

const VIEW: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

/// Runs the per-pixel sample loop and hands each drawn direction with its
/// full per-channel throughput (BRDF x cosine / pdf / spp) to `emit`. The
/// sampling never reads the environment map, so prediction and ground truth
/// share identical sample sets under a common seed.
fn shade_pixel(
    brdf: &MicrofacetBrdf,
    spec: &SphereRenderSpec,
    n: Vec3,
    pixel_index: u64,
    mut emit: impl FnMut(Vec3, [f64; 3]),
) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(pixel_index);
    let inv_spp = 1.0 / spec.spp as f64;
    for _ in 0..spec.spp {
        match spec.mode {
            SampleMode::Importance => {
                if let Some((l, pdf)) = brdf.sample(n, VIEW, &mut rng) {
                    let nl = n.dot(l);
                    if nl <= 0.0 {
                        continue;
                    }
                    let f = brdf.eval(n, VIEW, l);
                    let k = nl / pdf * inv_spp;
                    emit(l, [f[0] * k, f[1] * k, f[2] * k]);
                }
            }
            SampleMode::Uniform => {
                let u1: f64 = rng.gen();
                let u2: f64 = rng.gen();
                let theta = PI * u1;
                let phi = 2.0 * PI * u2;
                let st = theta.sin();
                if st < 1e-9 {
                    continue;
                }
                let l = Vec3::new(st * phi.cos(), theta.cos(), st * phi.sin());
                let nl = n.dot(l);
                if nl <= 0.0 {
                    continue;
                }
                let f = brdf.eval(n, VIEW, l);
                let pdf = 1.0 / (2.0 * PI * PI * st);
                let k = nl / pdf * inv_spp;
                emit(l, [f[0] * k, f[1] * k, f[2] * k]);
            }
        }
    }
}

/// Monte-Carlo render of the orthographic glossy sphere under `env`.
/// Deterministic given the seed regardless of thread count.
pub fn render_sphere(
    env: &EquirectMap,
    brdf: &MicrofacetBrdf,
    spec: &SphereRenderSpec,
) -> Result<HdrImage> {
    if env.channels != 3 {
        return Err(Error::invalid("sphere rendering needs a 3-channel HDR map"));
    }
    spec.validate()?;
    let res = spec.resolution;
    let rows: Vec<Vec<f64>> = (0..res)
        .into_par_iter()
        .map(|py| {
            let mut row = vec![0.0; res * 3];
            for px in 0..res {
                let n = match sphere_pixel_normal(px, py, res) {
                    Some(n) => n,
                    None => continue,
                };
                let mut out = [0.0; 3];
                shade_pixel(brdf, spec, n, (py * res + px) as u64, |l, w| {
                    let rad = env.sample_dir(l);
                    for ch in 0..3 {
                        out[ch] += w[ch] * rad[ch];
                    }
                });
                row[px * 3..px * 3 + 3].copy_from_slice(&out);
            }
            row
        })
        .collect();
    HdrImage::from_data(res, res, rows.concat())
}

/// Render loss of Eq.-style clamped sphere images plus its exact gradient
/// with respect to the predicted environment map. Both spheres are rendered
/// with common random numbers; the gradient pass replays the same streams.
pub fn render_sphere_env_grad(
    env_pred: &EquirectMap,
    env_gt: &EquirectMap,
    brdf: &MicrofacetBrdf,
    spec: &SphereRenderSpec,
) -> Result<(f64, EquirectMap)> {
    if !env_pred.same_shape(env_gt) {
        return Err(Error::shape("environment maps differ in shape"));
    }
    let img_pred = render_sphere(env_pred, brdf, spec)?;
    let img_gt = render_sphere(env_gt, brdf, spec)?;
    let res = spec.resolution;
    let n_vals = (res * res * 3) as f64;

    let mut loss = 0.0;
    // dLoss/dI for unclamped pixels; zero where the prediction saturates
    let mut upstream = vec![0.0; res * res * 3];
    for (i, (p, g)) in img_pred.data().iter().zip(img_gt.data()).enumerate() {
        let d = p.clamp(0.0, 1.0) - g.clamp(0.0, 1.0);
        loss += d * d;
        if *p < 1.0 {
            upstream[i] = 2.0 * d / n_vals;
        }
    }
    loss /= n_vals;

    let n_chunks = 8usize.min(res).max(1);
    let chunk = res.div_ceil(n_chunks);
    let partials: Vec<EquirectMap> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut grad = EquirectMap::zeros(env_pred.height, 3);
            for py in (ci * chunk)..((ci + 1) * chunk).min(res) {
                for px in 0..res {
                    let n = match sphere_pixel_normal(px, py, res) {
                        Some(n) => n,
                        None => continue,
                    };
                    let base = (py * res + px) * 3;
                    let up = [upstream[base], upstream[base + 1], upstream[base + 2]];
                    if up == [0.0; 3] {
                        // streams are per-pixel, so skipping is harmless
                        continue;
                    }
                    shade_pixel(brdf, spec, n, (py * res + px) as u64, |l, w| {
                        for (r, c, tw) in env_pred.sample_dir_weights(l) {
                            for ch in 0..3 {
                                let v = grad.get(r, c, ch) + up[ch] * w[ch] * tw;
                                grad.set(r, c, ch, v);
                            }
                        }
                    });
                }
            }
            grad
        })
        .collect();

    let mut total = EquirectMap::zeros(env_pred.height, 3);
    for p in &partials {
        for (a, b) in total.data_mut().iter_mut().zip(p.data()) {
            *a += b;
        }
    }
    Ok((loss, total))
}
