//! Single-view blending and the video accumulation state machine: blend
//! weights from the visibility mask, the conservative depth clamp, and the
//! per-frame update of the blended map, accumulated depth and accumulated
//! weight.

use crate::camera::Camera;
use crate::equirect::EquirectMap;
use crate::error::{Error, Result};
use crate::fit::{fit_sglv, init_fit_volume, FitOptions};
use crate::grid::Grid;
use crate::image::{DepthMap, HdrImage};
use crate::math::Vec3;
use crate::panorama::{build_partial_mesh, render_partial_pano, PanoBundle, UNSEEN_DEPTH};
use crate::raytrace::{render_envmap, RenderSettings};
use crate::volume::{merge_volumes, InitialVolume, SglvGrid, VolumeConfig};
use std::collections::VecDeque;

/// Per-pixel weight mixing detailed reflection into the volume render.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights {
    /// 1-channel map in [0, 1]; zero wherever the bundle mask is zero.
    pub weights: EquirectMap,
}

/// Accumulated lighting state carried from frame to frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalState {
    /// Blended map of the previous frame.
    pub blended: EquirectMap,
    /// Accumulated detail depth; `UNSEEN_DEPTH` where nothing was observed.
    pub depth: EquirectMap,
    /// Accumulated blend weight in [0, 1], nondecreasing over frames.
    pub coverage: EquirectMap,
    pub frame_index: usize,
}

impl TemporalState {
    pub fn new(height: usize) -> TemporalState {
        TemporalState {
            blended: EquirectMap::zeros(height, 3),
            depth: EquirectMap::filled(height, 1, UNSEEN_DEPTH),
            coverage: EquirectMap::zeros(height, 1),
            frame_index: 0,
        }
    }
}

/// Erodes the bundle mask by `feather` pixels and feathers it back linearly
/// over another `feather` pixels, so mask interiors get weight 1 and
/// boundaries ramp to 0. Distances are chessboard with column wrap.
pub fn compute_blend_weight(bundle: &PanoBundle, feather: usize) -> BlendWeights {
    let mask = &bundle.mask;
    if feather == 0 {
        return BlendWeights { weights: mask.clone() };
    }
    let (h, w) = (mask.height, mask.width());
    // multi-source BFS from every mask-zero pixel
    let mut dist = vec![usize::MAX; h * w];
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c, 0) == 0.0 {
                dist[r * w + c] = 0;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * w + c];
        for dr in -1i64..=1 {
            let nr = r as i64 + dr;
            if nr < 0 || nr >= h as i64 {
                continue;
            }
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let nc = (c as i64 + dc).rem_euclid(w as i64);
                let i = nr as usize * w + nc as usize;
                if dist[i] > d + 1 {
                    dist[i] = d + 1;
                    queue.push_back((nr as usize, nc as usize));
                }
            }
        }
    }
    let mut weights = EquirectMap::zeros(h, 1);
    let f = feather as f64;
    for r in 0..h {
        for c in 0..w {
            let d = dist[r * w + c];
            let v = if d == usize::MAX {
                1.0
            } else {
                (d as f64 / f - 1.0).clamp(0.0, 1.0)
            };
            weights.set(r, c, 0, v);
        }
    }
    BlendWeights { weights }
}

/// Pixelwise convex blend L = volume*(1 - w) + detail*w.
pub fn blend_single(
    volume_map: &EquirectMap,
    bundle: &PanoBundle,
    weights: &BlendWeights,
) -> Result<EquirectMap> {
    if volume_map.channels != 3
        || !bundle.color.same_shape(volume_map)
        || weights.weights.height != volume_map.height
    {
        return Err(Error::shape("blend inputs differ in shape"));
    }
    let h = volume_map.height;
    let mut out = EquirectMap::zeros(h, 3);
    for r in 0..h {
        for c in 0..2 * h {
            let w = weights.weights.get(r, c, 0);
            let dot = volume_map.get3(r, c);
            let det = bundle.color.get3(r, c);
            out.set3(
                r,
                c,
                [
                    dot[0] * (1.0 - w) + det[0] * w,
                    dot[1] * (1.0 - w) + det[1] * w,
                    dot[2] * (1.0 - w) + det[2] * w,
                ],
            );
        }
    }
    Ok(out)
}

/// Zeroes the weight wherever the newly observed surface is not at least
/// `threshold` closer than the accumulated one, protecting stored detail
/// from depth flicker. Previously unseen pixels (accumulated depth at the
/// sentinel) always pass.
pub fn conservative_clamp(
    weights: &BlendWeights,
    prev_depth: &EquirectMap,
    new_depth: &EquirectMap,
    threshold: f64,
) -> BlendWeights {
    let h = weights.weights.height;
    let mut out = weights.weights.clone();
    for r in 0..h {
        for c in 0..2 * h {
            let gap = prev_depth.get(r, c, 0) - new_depth.get(r, c, 0);
            if gap < threshold {
                out.set(r, c, 0, 0.0);
            }
        }
    }
    BlendWeights { weights: out }
}

/// One frame of the accumulation state machine. `weights` must already be
/// conservative-clamped. Per pixel with weight m and coverage h:
/// out = m*detail + (1-m)*((1-h)*volume + h*previous);
/// depth' = m*detail_depth + (1-m)*depth;
/// coverage' = min(coverage + m, 1).
pub fn temporal_update(
    state: &TemporalState,
    volume_map: &EquirectMap,
    bundle: &PanoBundle,
    weights: &BlendWeights,
) -> Result<(EquirectMap, TemporalState)> {
    if !state.blended.same_shape(volume_map)
        || !bundle.color.same_shape(volume_map)
        || weights.weights.height != volume_map.height
    {
        return Err(Error::shape("temporal update inputs differ in shape"));
    }
    let h = volume_map.height;
    let mut blended = EquirectMap::zeros(h, 3);
    let mut depth = EquirectMap::zeros(h, 1);
    let mut coverage = EquirectMap::zeros(h, 1);
    for r in 0..h {
        for c in 0..2 * h {
            let m = weights.weights.get(r, c, 0);
            let hm = state.coverage.get(r, c, 0);
            let dot = volume_map.get3(r, c);
            let det = bundle.color.get3(r, c);
            let prev = state.blended.get3(r, c);
            let mut out = [0.0; 3];
            for ch in 0..3 {
                out[ch] = m * det[ch] + (1.0 - m) * ((1.0 - hm) * dot[ch] + hm * prev[ch]);
            }
            blended.set3(r, c, out);

            // depth accumulation with sentinel guards: an untouched pixel
            // keeps its (possibly infinite) history, and the first partial
            // observation takes the new depth wholesale instead of leaking
            // the infinity through the blend
            let pd = state.depth.get(r, c, 0);
            let nd = bundle.depth.get(r, c, 0);
            let d = if m == 0.0 {
                pd
            } else if pd.is_infinite() {
                nd
            } else {
                m * nd + (1.0 - m) * pd
            };
            depth.set(r, c, 0, d);
            coverage.set(r, c, 0, (hm + m).min(1.0));
        }
    }
    let next = TemporalState {
        blended: blended.clone(),
        depth,
        coverage,
        frame_index: state.frame_index + 1,
    };
    Ok((blended, next))
}

/// Options for the full video pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Output environment map height (width is 2x).
    pub height: usize,
    /// Fit settings; fitting only runs for frames with supplied targets.
    pub fit: FitOptions,
    /// Blend weight feather in pixels.
    pub feather: usize,
    /// Conservative depth clamp threshold in meters.
    pub clamp_threshold: f64,
    /// Depth-ratio gap threshold for the partial mesh.
    pub mesh_gap: f64,
    /// Voxel count override (nx, ny, nz); None = full-size default grid.
    pub volume_counts: Option<(usize, usize, usize)>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            height: 120,
            fit: FitOptions::default(),
            feather: 2,
            clamp_threshold: 0.25,
            mesh_gap: 0.1,
            volume_counts: None,
        }
    }
}

/// Incremental video pipeline: owns the accumulated lighting state and the
/// merged volume. One `step` per frame.
#[derive(Debug, Clone)]
pub struct VideoPipeline {
    pub config: VolumeConfig,
    pub probe: Vec3,
    pub opts: PipelineOptions,
    pub state: TemporalState,
    pub merged: Option<SglvGrid>,
    /// Loss trace of the most recent fitted frame, if any.
    pub last_fit_trace: Option<Vec<crate::fit::TraceRow>>,
}

impl VideoPipeline {
    /// Anchors the volume to the first frame's camera and depth range.
    pub fn new(
        first_camera: &Camera,
        first_depth: &DepthMap,
        probe: Vec3,
        opts: PipelineOptions,
    ) -> Result<VideoPipeline> {
        let depth_max = first_depth
            .max_depth()
            .ok_or_else(|| Error::invalid("first frame has no valid depth"))?;
        let config = match opts.volume_counts {
            Some((nx, ny, nz)) => {
                VolumeConfig::from_depth_max_with_counts(depth_max, first_camera, nx, ny, nz)?
            }
            None => VolumeConfig::from_depth_max(depth_max, first_camera)?,
        };
        Ok(VideoPipeline {
            config,
            probe,
            opts: opts.clone(),
            state: TemporalState::new(opts.height),
            merged: None,
            last_fit_trace: None,
        })
    }

    /// Processes one frame: init volume, optional fit, running-average merge,
    /// volume render, detail bundle, weights, clamp, temporal update.
    pub fn step(
        &mut self,
        camera: &Camera,
        image: &HdrImage,
        depth: &DepthMap,
        fit_targets: &[(Vec3, EquirectMap)],
    ) -> Result<EquirectMap> {
        let init = InitialVolume::build(&self.config, camera, image, depth);
        let current = if fit_targets.is_empty() {
            self.last_fit_trace = None;
            init_fit_volume(&init)
        } else {
            let fitted = fit_sglv(&init, fit_targets, &self.opts.fit)?;
            self.last_fit_trace = Some(fitted.trace);
            fitted.volume
        };
        // running average over observed voxels: frame i keeps i/(i+1) of the
        // accumulated volume where the current camera sees the voxel, and all
        // of it elsewhere (a frame says nothing about voxels outside its
        // frustum, so averaging in their empty initialization would fade
        // surfaces that leave the view)
        let i = self.state.frame_index;
        let merged = match (&self.merged, i) {
            (Some(prev), i) if i > 0 => {
                let u = i as f64 / (i + 1) as f64;
                let mut update = Grid::filled(self.config.nx, self.config.ny, self.config.nz, 1, 1.0);
                for ix in 0..self.config.nx {
                    for iy in 0..self.config.ny {
                        for iz in 0..self.config.nz {
                            let center = self.config.volume_to_world(self.config.voxel_center(ix, iy, iz));
                            let pr = camera.project(center);
                            if !pr.behind && camera.pixel_in_image(pr.pixel) {
                                update.set(ix, iy, iz, 0, u);
                            }
                        }
                    }
                }
                merge_volumes(&current, prev, &update)?
            }
            _ => current,
        };
        let settings = RenderSettings::for_volume(&self.config);
        let volume_map = render_envmap(&merged, self.probe, self.opts.height, &settings);
        self.merged = Some(merged);

        let mesh = build_partial_mesh(camera, depth, image, self.opts.mesh_gap)?;
        let bundle = render_partial_pano(&mesh, self.probe, self.opts.height, &self.config.frame);
        let weights = compute_blend_weight(&bundle, self.opts.feather);
        let weights = conservative_clamp(
            &weights,
            &self.state.depth,
            &bundle.depth,
            self.opts.clamp_threshold,
        );
        let (out, next) = temporal_update(&self.state, &volume_map, &bundle, &weights)?;
        self.state = next;
        Ok(out)
    }
}

/// Runs the accumulation pipeline over a frame sequence and returns the
/// per-frame blended environment maps. `fit_targets` is either empty (no
/// fitting anywhere) or one target list per frame.
pub fn run_video_pipeline(
    frames: &[(Camera, HdrImage, DepthMap)],
    probe: Vec3,
    fit_targets: &[Vec<(Vec3, EquirectMap)>],
    opts: &PipelineOptions,
) -> Result<Vec<EquirectMap>> {
    if frames.is_empty() {
        return Err(Error::invalid("video pipeline needs at least one frame"));
    }
    if !fit_targets.is_empty() && fit_targets.len() != frames.len() {
        return Err(Error::invalid("fit target lists must match the frame count"));
    }
    let mut pipeline = VideoPipeline::new(&frames[0].0, &frames[0].2, probe, opts.clone())?;
    let empty: Vec<(Vec3, EquirectMap)> = Vec::new();
    frames
        .iter()
        .enumerate()
        .map(|(i, (cam, img, depth))| {
            let targets = fit_targets.get(i).unwrap_or(&empty);
            pipeline.step(cam, img, depth, targets)
        })
        .collect()
}
