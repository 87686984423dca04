//! Losses and gradient-based fitting of lighting volumes to target
//! environment maps, plus finite-difference gradient verification.
//!
//! The objective mixes a log-space L2 on the HDR maps with a clamped render
//! loss on shaded spheres; video mode adds a smoothness term between
//! consecutive predictions. Volume parameters are optimized with Adam
//! through unconstrained transforms (logistic opacity, softplus emission /
//! amplitude / bandwidth, normalized free axis), with near-surface clearing
//! re-applied every iteration.

use crate::equirect::EquirectMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::Vec3;
use crate::raytrace::{
    backprop_envmap, envmap_loss_gradients, loss_and_upstream, render_envmap, GradLoss,
    ParamGrads, RenderSettings,
};
use crate::shading::{render_sphere, render_sphere_env_grad, MicrofacetBrdf, SphereRenderSpec};
use crate::volume::{InitialVolume, SglvGrid, DEFAULT_LOBE_AXIS};

/// Weights of the render and smoothness terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub render: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { render: 0.3, smooth: 0.01 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Probe positions sampled per camera frustum when none are supplied.
    pub n_probes: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Sphere image resolution used by the render loss during fitting.
    pub sphere_resolution: usize,
    /// Samples per sphere pixel during fitting.
    pub spp: usize,
    /// Samples per sphere pixel for final evaluation renders.
    pub eval_spp: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iterations: 500,
            learning_rate: 1e-4,
            n_probes: 3,
            seed: 0,
            weights: LossWeights::default(),
            sphere_resolution: 32,
            spp: 64,
            eval_spp: 256,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration budget must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Mean over pixels and channels of (log(pred+1) - log(gt+1))^2.
pub fn loss_log_l2(pred: &EquirectMap, gt: &EquirectMap) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::shape("maps differ in shape"));
    }
    let mut total = 0.0;
    for (p, t) in pred.data().iter().zip(gt.data()) {
        if *p < 0.0 || *t < 0.0 {
            return Err(Error::invalid("log-L2 inputs must be nonnegative"));
        }
        let d = (p + 1.0).ln() - (t + 1.0).ln();
        total += d * d;
    }
    Ok(total / pred.data().len() as f64)
}

/// Clamped render loss: shade a sphere under both maps with common random
/// numbers, clamp to [0, 1], mean squared difference.
pub fn loss_render(
    pred: &EquirectMap,
    gt: &EquirectMap,
    brdf: &MicrofacetBrdf,
    spec: &SphereRenderSpec,
) -> Result<f64> {
    let img_pred = render_sphere(pred, brdf, spec)?;
    let img_gt = render_sphere(gt, brdf, spec)?;
    let n = img_pred.data().len() as f64;
    Ok(img_pred
        .data()
        .iter()
        .zip(img_gt.data())
        .map(|(p, g)| {
            let d = p.clamp(0.0, 1.0) - g.clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / n)
}

/// Temporal smoothness: the log-L2 kernel between consecutive predictions.
pub fn loss_smooth(curr: &EquirectMap, prev: &EquirectMap) -> Result<f64> {
    loss_log_l2(curr, prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Single,
    Video,
}

/// Weighted objective over matched prediction/target lists. Video mode adds
/// the smoothness term between consecutive predictions.
pub fn total_loss(
    preds: &[EquirectMap],
    gts: &[EquirectMap],
    brdf: &MicrofacetBrdf,
    spec: &SphereRenderSpec,
    weights: &LossWeights,
    mode: FitMode,
) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::invalid("prediction and target lists must match and be nonempty"));
    }
    let n = preds.len() as f64;
    let mut log_term = 0.0;
    let mut render_term = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        log_term += loss_log_l2(p, g)?;
        if weights.render != 0.0 {
            render_term += loss_render(p, g, brdf, spec)?;
        }
    }
    let mut total = log_term / n + weights.render * render_term / n;
    if mode == FitMode::Video && preds.len() > 1 {
        let mut sm = 0.0;
        for w in preds.windows(2) {
            sm += loss_smooth(&w[1], &w[0])?;
        }
        total += weights.smooth * sm / (preds.len() - 1) as f64;
    }
    Ok(total)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    let y = y.max(1e-12);
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unconstrained parameter vectors, one entry per constrained grid value.
struct FitParams {
    color: Vec<f64>,     // softplus -> c
    alpha: Vec<f64>,     // logistic -> alpha
    amplitude: Vec<f64>, // softplus -> w
    bandwidth: Vec<f64>, // softplus -> lambda
    axis: Vec<f64>,      // normalized -> unit axis
}

const ALPHA_CLAMP: f64 = 1e-4;
const SOFT_FLOOR: f64 = 1e-8;
/// Stand-in for a zero initial lobe amplitude, which softplus cannot reach.
const AMP_INIT: f64 = 1e-3;

impl FitParams {
    fn from_initial(init: &InitialVolume) -> FitParams {
        let n = init.alpha.n_voxels();
        FitParams {
            color: init.color.data().iter().map(|c| softplus_inv(c.max(SOFT_FLOOR))).collect(),
            alpha: init
                .alpha
                .data()
                .iter()
                .map(|a| logit(a.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)))
                .collect(),
            amplitude: vec![softplus_inv(AMP_INIT); n * 3],
            bandwidth: vec![softplus_inv(1.0); n],
            axis: DEFAULT_LOBE_AXIS.repeat(n),
        }
    }

    /// Constrained volume with the near-surface clearing factors baked in.
    fn constrain(&self, init: &InitialVolume, factors: &[f64]) -> SglvGrid {
        let cfg = init.config.clone();
        let mut vol = SglvGrid::empty(cfg.clone());
        let n = factors.len();
        for i in 0..n {
            let f = factors[i];
            for ch in 0..3 {
                vol.color.data_mut()[i * 3 + ch] = f * softplus(self.color[i * 3 + ch]);
                vol.amplitude.data_mut()[i * 3 + ch] = f * softplus(self.amplitude[i * 3 + ch]);
            }
            vol.alpha.data_mut()[i] = f * sigmoid(self.alpha[i]);
            vol.bandwidth.data_mut()[i] = f * softplus(self.bandwidth[i]);
            let s = Vec3::from_array([
                self.axis[i * 3],
                self.axis[i * 3 + 1],
                self.axis[i * 3 + 2],
            ]);
            let s = match (f > 0.0, s.try_normalized()) {
                (true, Some(u)) => u.to_array(),
                _ => DEFAULT_LOBE_AXIS,
            };
            vol.axis.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&s);
        }
        vol
    }

    /// Pull constrained-space gradients back through the transforms.
    fn chain(&self, grads: &ParamGrads, factors: &[f64]) -> FitParams {
        let n = factors.len();
        let mut out = FitParams {
            color: vec![0.0; n * 3],
            alpha: vec![0.0; n],
            amplitude: vec![0.0; n * 3],
            bandwidth: vec![0.0; n],
            axis: vec![0.0; n * 3],
        };
        for i in 0..n {
            let f = factors[i];
            if f == 0.0 {
                continue;
            }
            for ch in 0..3 {
                let k = i * 3 + ch;
                out.color[k] = grads.color.data()[k] * f * sigmoid(self.color[k]);
                out.amplitude[k] = grads.amplitude.data()[k] * f * sigmoid(self.amplitude[k]);
            }
            let sa = sigmoid(self.alpha[i]);
            out.alpha[i] = grads.alpha.data()[i] * f * sa * (1.0 - sa);
            out.bandwidth[i] = grads.bandwidth.data()[i] * f * sigmoid(self.bandwidth[i]);
            let u = Vec3::from_array([
                self.axis[i * 3],
                self.axis[i * 3 + 1],
                self.axis[i * 3 + 2],
            ]);
            if let Some(s) = u.try_normalized() {
                let norm = u.norm();
                let g = Vec3::from_array([
                    grads.axis.data()[i * 3],
                    grads.axis.data()[i * 3 + 1],
                    grads.axis.data()[i * 3 + 2],
                ]);
                let gs = g - s * g.dot(s);
                out.axis[i * 3..i * 3 + 3].copy_from_slice(&(gs / norm).to_array());
            }
        }
        out
    }

    fn vectors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.color,
            &mut self.alpha,
            &mut self.amplitude,
            &mut self.bandwidth,
            &mut self.axis,
        ]
    }

    fn vectors(&self) -> [&Vec<f64>; 5] {
        [&self.color, &self.alpha, &self.amplitude, &self.bandwidth, &self.axis]
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    fn new(params: &FitParams) -> Adam {
        let sizes: Vec<usize> = params.vectors().iter().map(|v| v.len()).collect();
        Adam {
            m: sizes.iter().map(|s| vec![0.0; *s]).collect(),
            v: sizes.iter().map(|s| vec![0.0; *s]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut FitParams, grads: &FitParams, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for (slot, (p, g)) in params
            .vectors_mut()
            .into_iter()
            .zip(grads.vectors())
            .enumerate()
        {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for k in 0..p.len() {
                m[k] = B1 * m[k] + (1.0 - B1) * g[k];
                v[k] = B2 * v[k] + (1.0 - B2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + EPS);
            }
        }
    }
}

/// One row of the fit loss trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_l2: f64,
    pub render: f64,
    pub total: f64,
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iteration,log_l2,render,total\n");
    for r in trace {
        s.push_str(&format!("{},{},{},{}\n", r.iteration, r.log_l2, r.render, r.total));
    }
    s
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub volume: SglvGrid,
    pub trace: Vec<TraceRow>,
}

/// The volume the optimizer starts from: the initial RGBA volume passed
/// through the fit transforms (including the softplus floors) and the
/// near-surface clearing. `fit_sglv` at iteration zero evaluates exactly
/// this volume.
pub fn init_fit_volume(init: &InitialVolume) -> SglvGrid {
    let params = FitParams::from_initial(init);
    params.constrain(init, &clearing_factors(init))
}

fn clearing_factors(init: &InitialVolume) -> Vec<f64> {
    init.empty.data().iter().map(|e| 1.0 + e).collect()
}

/// Mean losses and (optionally) constrained-space parameter gradients over
/// all targets.
fn objective(
    vol: &SglvGrid,
    targets: &[(Vec3, EquirectMap)],
    weights: &LossWeights,
    settings: &RenderSettings,
    brdf: &MicrofacetBrdf,
    sphere_spec: &SphereRenderSpec,
    with_grad: bool,
) -> Result<(f64, f64, Option<ParamGrads>)> {
    let mut exact = *settings;
    exact.early_out = false;
    let n = targets.len() as f64;
    let mut log_sum = 0.0;
    let mut render_sum = 0.0;
    let mut grads = with_grad.then(|| ParamGrads::zeros(&vol.config));
    for (pos, gt) in targets {
        let pred = render_envmap(vol, *pos, gt.height, &exact);
        let (l_log, mut upstream) = loss_and_upstream(&pred, gt, GradLoss::LogL2)?;
        log_sum += l_log;
        if weights.render != 0.0 {
            let (l_r, env_grad) = render_sphere_env_grad(&pred, gt, brdf, sphere_spec)?;
            render_sum += l_r;
            for (u, g) in upstream.data_mut().iter_mut().zip(env_grad.data()) {
                *u += weights.render * g;
            }
        }
        if let Some(total) = grads.as_mut() {
            total.add_assign(&backprop_envmap(vol, *pos, &exact, &upstream)?);
        }
    }
    if let Some(total) = grads.as_mut() {
        total.scale(1.0 / n);
    }
    Ok((log_sum / n, render_sum / n, grads))
}

/// Fits an SGLV to target environment maps by Adam in unconstrained
/// parameter space, applying near-surface clearing every iteration.
/// Deterministic given the seed; returns the best-loss iterate.
pub fn fit_sglv(
    init: &InitialVolume,
    targets: &[(Vec3, EquirectMap)],
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    if targets.is_empty() {
        return Err(Error::invalid("fitting needs at least one target"));
    }
    for (pos, gt) in targets {
        if !init.config.contains(init.config.world_to_volume(*pos)) {
            return Err(Error::invalid("target probe lies outside the volume"));
        }
        if gt.channels != 3 {
            return Err(Error::shape("targets must be 3-channel maps"));
        }
    }
    let factors = clearing_factors(init);
    let mut params = FitParams::from_initial(init);
    let mut adam = Adam::new(&params);
    let settings = RenderSettings::for_volume(&init.config);
    let brdf = MicrofacetBrdf::default();
    // frozen seed: common random numbers make the objective deterministic
    let sphere_spec = SphereRenderSpec {
        resolution: opts.sphere_resolution,
        spp: opts.spp,
        seed: opts.seed,
        ..SphereRenderSpec::default()
    };

    let mut trace = Vec::with_capacity(opts.iterations);
    let mut best: Option<(f64, SglvGrid)> = None;
    for iter in 0..opts.iterations {
        let vol = params.constrain(init, &factors);
        let (l_log, l_render, grads) =
            objective(&vol, targets, &opts.weights, &settings, &brdf, &sphere_spec, true)?;
        let total = l_log + opts.weights.render * l_render;
        trace.push(TraceRow { iteration: iter, log_l2: l_log, render: l_render, total });
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, vol));
        }
        let grad_params = params.chain(&grads.expect("gradients requested"), &factors);
        adam.step(&mut params, &grad_params, opts.learning_rate);
    }
    // the final step may still have improved things
    let vol = params.constrain(init, &factors);
    let (l_log, l_render, _) =
        objective(&vol, targets, &opts.weights, &settings, &brdf, &sphere_spec, false)?;
    let total = l_log + opts.weights.render * l_render;
    trace.push(TraceRow { iteration: opts.iterations, log_l2: l_log, render: l_render, total });
    if best.as_ref().is_none_or(|(b, _)| total < *b) {
        best = Some((total, vol));
    }
    let volume = best.expect("at least one iterate").1;
    volume.validate()?;
    Ok(FitResult { volume, trace })
}

/// Maximum relative error between analytic gradients and central finite
/// differences of the summed log-L2 loss, over every volume parameter.
/// Opacity entries within eps of the [0, 1] boundary are skipped (the
/// constraint makes them one-sided). Denominator floored at 1e-6.
pub fn grad_check(sglv: &SglvGrid, targets: &[(Vec3, EquirectMap)], eps: f64) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("gradient check needs at least one target"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let mut settings = RenderSettings::for_volume(&sglv.config);
    settings.early_out = false;

    let mut analytic = ParamGrads::zeros(&sglv.config);
    for (pos, gt) in targets {
        let (_, g) = envmap_loss_gradients(sglv, *pos, gt, &settings, GradLoss::LogL2)?;
        analytic.add_assign(&g);
    }
    let loss_at = |vol: &SglvGrid| -> Result<f64> {
        let mut total = 0.0;
        for (pos, gt) in targets {
            let pred = render_envmap(vol, *pos, gt.height, &settings);
            total += loss_and_upstream(&pred, gt, GradLoss::LogL2)?.0;
        }
        Ok(total)
    };

    let mut max_rel: f64 = 0.0;
    let fields: [(&Grid, fn(&mut SglvGrid) -> &mut Grid, bool); 5] = [
        (&analytic.color, |v| &mut v.color, false),
        (&analytic.alpha, |v| &mut v.alpha, true),
        (&analytic.amplitude, |v| &mut v.amplitude, false),
        (&analytic.bandwidth, |v| &mut v.bandwidth, false),
        (&analytic.axis, |v| &mut v.axis, false),
    ];
    for (grad_grid, field, is_alpha) in fields {
        for k in 0..grad_grid.data().len() {
            if is_alpha {
                let a = sglv.alpha.data()[k];
                if a < eps || a > 1.0 - eps {
                    continue; // clip boundary: one-sided, not checked
                }
            }
            let mut hi = sglv.clone();
            field(&mut hi).data_mut()[k] += eps;
            let mut lo = sglv.clone();
            field(&mut lo).data_mut()[k] -= eps;
            let fd = (loss_at(&hi)? - loss_at(&lo)?) / (2.0 * eps);
            let an = grad_grid.data()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
