//! Command-line surface: scene generation, single-frame fitting, the video
//! accumulation pipeline, sphere rendering comparisons and gradient checks.
//!
//! Exit codes: 0 success, 2 input error, 3 validation failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sglv::camera::Camera;
use sglv::equirect::EquirectMap;
use sglv::fit::{grad_check, loss_log_l2, trace_to_csv, FitOptions, LossWeights};
use sglv::image::{DepthMap, HdrImage};
use sglv::io;
use sglv::math::{Frame, Vec3};
use sglv::panorama::{build_partial_mesh, render_partial_pano};
use sglv::raytrace::{render_envmap, RenderSettings};
use sglv::scenegen::{
    gen_trajectory, render_gt_envmap, render_scene_view, sample_probe_positions, BoxScene,
};
use sglv::shading::{render_sphere, MicrofacetBrdf, SampleMode, SphereRenderSpec};
use sglv::temporal::{PipelineOptions, TemporalState, VideoPipeline};
use sglv::volume::{random_sglv, SglvGrid, VolumeConfig};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const THREADS_ENV: &str = "SGLV_THREADS";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
enum CliError {
    /// Bad inputs or I/O problems: exit 2.
    Input(String),
    /// A check the command ran did not pass: exit 3.
    Validation(String),
}

impl From<sglv::Error> for CliError {
    fn from(e: sglv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "sglv", version, about = "Spherical-Gaussian lighting volume pipeline")]
struct Cli {
    /// Worker threads (default: logical cores; SGLV_THREADS overrides the default)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: frames, poses, ground-truth probes
    Scenegen(ScenegenArgs),
    /// Fit a lighting volume to one RGBD frame and blend in detail
    FitSingle(FitSingleArgs),
    /// Run the temporal accumulation pipeline over a frame sequence
    Video(VideoArgs),
    /// Shade a glossy sphere under an HDR environment map
    RenderSphere(RenderSphereArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
struct ScenegenArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; omitted = the built-in example room
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Number of frames
    #[arg(long, default_value_t = 31)]
    frames: usize,
    /// Ground-truth environment map height (width is 2x)
    #[arg(long, default_value_t = 120)]
    height: usize,
    /// Probes sampled per camera frustum
    #[arg(long, default_value_t = 3)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct FitSingleArgs {
    /// Directory produced by `sglv scenegen`
    #[arg(long)]
    frames: PathBuf,
    /// Frame to fit
    #[arg(long, default_value_t = 0)]
    frame_index: usize,
    /// Output probe position "x,y,z" (world coordinates)
    #[arg(long, value_parser = parse_vec3)]
    probe: Vec3,
    #[arg(long)]
    out: PathBuf,
    /// Output environment map height
    #[arg(long, default_value_t = 120)]
    height: usize,
    /// Fit iterations; 0 skips fitting (initialization only)
    #[arg(long, default_value_t = 150)]
    iters: usize,
    /// Adam step size
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Sphere samples per pixel for the render loss
    #[arg(long, default_value_t = 64)]
    spp: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Blend weight feather in pixels
    #[arg(long, default_value_t = 2)]
    feather: usize,
    /// Voxel counts "nx,ny,nz"; omitted = full-size 84,60,64 grid
    #[arg(long, value_parser = parse_counts)]
    voxels: Option<(usize, usize, usize)>,
    /// Emit only the volume render, skipping the detail blend
    #[arg(long, default_value_t = false)]
    no_blend: bool,
}

#[derive(Args, Serialize)]
struct VideoArgs {
    /// Directory produced by `sglv scenegen`
    #[arg(long)]
    frames: PathBuf,
    /// Output probe position "x,y,z" (world coordinates)
    #[arg(long, value_parser = parse_vec3)]
    probe: Vec3,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 120)]
    height: usize,
    /// Fit iterations per frame; 0 skips fitting
    #[arg(long, default_value_t = 150)]
    iters: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    spp: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    feather: usize,
    /// Voxel counts "nx,ny,nz"; omitted = full-size grid
    #[arg(long, value_parser = parse_counts)]
    voxels: Option<(usize, usize, usize)>,
    /// Resume from a state file written by --state-out
    #[arg(long)]
    state_in: Option<PathBuf>,
    /// Write the final accumulation state here
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SphereMode {
    Importance,
    Uniform,
    Both,
}

#[derive(Args, Serialize)]
struct RenderSphereArgs {
    /// HDR environment map (PFM, width = 2 * height)
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SphereMode::Importance)]
    mode: SphereMode,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    #[arg(long, default_value_t = 128)]
    spp: usize,
    /// Samples per pixel of the MSE reference render
    #[arg(long, default_value_t = 4096)]
    ref_spp: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Number of random volumes to check
    #[arg(long, default_value_t = 10)]
    volumes: usize,
    /// Voxels per side of each random volume
    #[arg(long, default_value_t = 4)]
    size: usize,
    /// Target environment map height
    #[arg(long, default_value_t = 4)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected x,y,z".into());
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse::<f64>().map_err(|e| e.to_string())?;
    }
    Ok(Vec3::from_array(v))
}

fn parse_counts(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected nx,ny,nz".into());
    }
    let mut v = [0usize; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse::<usize>().map_err(|e| e.to_string())?;
    }
    Ok((v[0], v[1], v[2]))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("error: failed to configure the thread pool");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Scenegen(a) => cmd_scenegen(&a),
        Command::FitSingle(a) => cmd_fit_single(&a),
        Command::Video(a) => cmd_video(&a),
        Command::RenderSphere(a) => cmd_render_sphere(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            ExitCode::from(3)
        }
    }
}

// ---------------------------------------------------------------- sidecars

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_run_sidecar(dir: &Path, command: &str, args: &impl Serialize) -> CliResult {
    let value = serde_json::json!({ "command": command, "args": args });
    write_json(&dir.join("run.json"), &value)
}

// ------------------------------------------------------------ poses/probes

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    /// 4x4 camera-to-world, row-major.
    camera_to_world: [[f64; 4]; 4],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl PoseRecord {
    fn from_camera(cam: &Camera) -> PoseRecord {
        let (r, u, b, p) = (cam.right, cam.up, cam.backward, cam.position);
        PoseRecord {
            camera_to_world: [
                [r.x, u.x, b.x, p.x],
                [r.y, u.y, b.y, p.y],
                [r.z, u.z, b.z, p.z],
                [0.0, 0.0, 0.0, 1.0],
            ],
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        }
    }

    fn to_camera(&self) -> Result<Camera, sglv::Error> {
        let m = &self.camera_to_world;
        Camera::new(
            Vec3::new(m[0][3], m[1][3], m[2][3]),
            Vec3::new(m[0][0], m[1][0], m[2][0]),
            Vec3::new(m[0][1], m[1][1], m[2][1]),
            Vec3::new(m[0][2], m[1][2], m[2][2]),
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ProbeRecord {
    position: [f64; 3],
    gt: String,
}

fn frame_color_name(i: usize) -> String {
    format!("frame_{i:04}.pfm")
}

fn frame_depth_name(i: usize) -> String {
    format!("depth_{i:04}.pfm")
}

fn load_poses(dir: &Path) -> Result<Vec<PoseRecord>, CliError> {
    let text = fs::read_to_string(dir.join("poses.json"))
        .map_err(|e| CliError::Input(format!("cannot read poses.json: {e}")))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_frame(dir: &Path, poses: &[PoseRecord], i: usize) -> Result<(Camera, HdrImage, DepthMap), CliError> {
    let pose = poses
        .get(i)
        .ok_or_else(|| CliError::Input(format!("frame {i} not present in poses.json")))?;
    let cam = pose.to_camera()?;
    let img = io::load_hdr_image(&dir.join(frame_color_name(i)))?;
    let depth = io::load_depth_map(&dir.join(frame_depth_name(i)))?;
    if img.width != cam.width || img.height != cam.height {
        return Err(CliError::Input(format!("frame {i} resolution does not match its pose")));
    }
    Ok((cam, img, depth))
}

fn load_fit_targets(dir: &Path, i: usize) -> Result<Vec<(Vec3, EquirectMap)>, CliError> {
    let text = fs::read_to_string(dir.join("probes.json"))
        .map_err(|e| CliError::Input(format!("cannot read probes.json: {e}")))?;
    let all: Vec<Vec<ProbeRecord>> = serde_json::from_str(&text)?;
    let frame = all
        .get(i)
        .ok_or_else(|| CliError::Input(format!("frame {i} not present in probes.json")))?;
    frame
        .iter()
        .map(|p| {
            let gt = io::load_equirect(&dir.join(&p.gt))?;
            Ok((Vec3::from_array(p.position), gt))
        })
        .collect()
}

// ---------------------------------------------------------------- scenegen

fn cmd_scenegen(args: &ScenegenArgs) -> CliResult {
    if args.frames == 0 {
        return Err(CliError::Input("--frames must be >= 1".into()));
    }
    let scene = match &args.scene {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read scene: {e}")))?;
            let scene: BoxScene = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("bad scene schema: {e}")))?;
            scene
        }
        None => BoxScene::example(),
    };
    scene.validate()?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("scene.json"), &scene)?;

    let cams = gen_trajectory(&scene, args.frames, args.seed)?;
    let anchor_frame = cams[0].frame();
    let mut poses = Vec::new();
    let mut probes: Vec<Vec<ProbeRecord>> = Vec::new();
    for (i, cam) in cams.iter().enumerate() {
        let (img, depth) = render_scene_view(&scene, cam)?;
        io::save_hdr_image(&args.out.join(frame_color_name(i)), &img)?;
        io::save_depth_map(&args.out.join(frame_depth_name(i)), &depth)?;
        io::png::save_hdr_preview(&args.out.join(format!("frame_{i:04}.png")), &img)?;
        poses.push(PoseRecord::from_camera(cam));

        let depth_max = depth
            .max_depth()
            .ok_or_else(|| CliError::Input(format!("frame {i} has no valid depth")))?;
        // frustum samples can pierce a near wall when depth_max comes from a
        // far one; keep drawing until enough probes land inside the room
        let mut positions = Vec::new();
        let mut attempt = 0u64;
        while positions.len() < args.probes && attempt < 200 {
            let seed = args.seed.wrapping_add(i as u64).wrapping_add(attempt.wrapping_mul(7919));
            for p in sample_probe_positions(cam, depth_max, args.probes, seed) {
                if positions.len() < args.probes && scene.contains(p) {
                    positions.push(p);
                }
            }
            attempt += 1;
        }
        if positions.len() < args.probes {
            return Err(CliError::Input(format!("could not place probes inside the room for frame {i}")));
        }
        let mut frame_probes = Vec::new();
        for (k, pos) in positions.iter().enumerate() {
            // ground truth in the frame-0 camera frame, matching the volume
            let gt = render_gt_envmap(&scene, *pos, args.height, &anchor_frame)?;
            let name = format!("gt_{i:04}_{k}.pfm");
            io::save_equirect(&args.out.join(&name), &gt)?;
            frame_probes.push(ProbeRecord { position: pos.to_array(), gt: name });
        }
        probes.push(frame_probes);
    }
    write_json(&args.out.join("poses.json"), &poses)?;
    write_json(&args.out.join("probes.json"), &probes)?;
    write_run_sidecar(&args.out, "scenegen", args)?;
    println!("wrote {} frames to {}", args.frames, args.out.display());
    Ok(())
}

// --------------------------------------------------------------- pipelines

fn pipeline_options(
    height: usize,
    iters: usize,
    lr: f64,
    spp: usize,
    seed: u64,
    feather: usize,
    voxels: Option<(usize, usize, usize)>,
) -> PipelineOptions {
    PipelineOptions {
        height,
        fit: FitOptions {
            iterations: iters.max(1),
            learning_rate: lr,
            seed,
            spp,
            weights: LossWeights::default(),
            ..FitOptions::default()
        },
        feather,
        volume_counts: voxels,
        ..PipelineOptions::default()
    }
}

fn cmd_fit_single(args: &FitSingleArgs) -> CliResult {
    fs::create_dir_all(&args.out)?;
    let poses = load_poses(&args.frames)?;
    let (cam, img, depth) = load_frame(&args.frames, &poses, args.frame_index)?;
    let targets = if args.iters > 0 {
        load_fit_targets(&args.frames, args.frame_index)?
    } else {
        Vec::new()
    };
    let opts = pipeline_options(
        args.height,
        args.iters,
        args.lr,
        args.spp,
        args.seed,
        args.feather,
        args.voxels,
    );
    let mut pipeline = VideoPipeline::new(&cam, &depth, args.probe, opts)?;
    let blended = pipeline.step(&cam, &img, &depth, &targets)?;
    let merged = pipeline.merged.as_ref().expect("volume exists after step");

    let settings = RenderSettings::for_volume(&pipeline.config);
    let ldot = render_envmap(merged, args.probe, args.height, &settings);
    io::save_equirect(&args.out.join("ldot.pfm"), &ldot)?;
    io::png::save_equirect_preview(&args.out.join("ldot.png"), &ldot)?;
    io::volume_bin::save_sglv(&args.out.join("volume.bin"), merged)?;

    let mesh = build_partial_mesh(&cam, &depth, &img, pipeline.opts.mesh_gap)?;
    let bundle = render_partial_pano(&mesh, args.probe, args.height, &pipeline.config.frame);
    io::save_equirect(&args.out.join("detail.pfm"), &bundle.color)?;
    io::save_equirect(&args.out.join("detail_depth.pfm"), &bundle.depth)?;
    io::png::save_mask_png(&args.out.join("mask.png"), &bundle.mask)?;

    if !args.no_blend {
        io::save_equirect(&args.out.join("blended.pfm"), &blended)?;
        io::png::save_equirect_preview(&args.out.join("blended.png"), &blended)?;
    }
    if let Some(trace) = &pipeline.last_fit_trace {
        fs::write(args.out.join("trace.csv"), trace_to_csv(trace))?;
    }
    write_run_sidecar(&args.out, "fit-single", args)?;
    println!("fit frame {} -> {}", args.frame_index, args.out.display());
    Ok(())
}

fn cmd_video(args: &VideoArgs) -> CliResult {
    fs::create_dir_all(&args.out)?;
    let poses = load_poses(&args.frames)?;
    let n_frames = poses.len();
    for i in 0..n_frames {
        if !args.frames.join(frame_color_name(i)).exists()
            || !args.frames.join(frame_depth_name(i)).exists()
        {
            return Err(CliError::Input(format!(
                "poses.json lists {n_frames} frames but frame {i} files are missing"
            )));
        }
    }
    let scene_text = fs::read_to_string(args.frames.join("scene.json"))
        .map_err(|e| CliError::Input(format!("cannot read scene.json: {e}")))?;
    let scene: BoxScene = serde_json::from_str(&scene_text)?;

    let opts = pipeline_options(
        args.height,
        args.iters,
        args.lr,
        args.spp,
        args.seed,
        args.feather,
        args.voxels,
    );
    let (mut pipeline, start) = match &args.state_in {
        Some(path) => {
            let (state, merged, config) = load_state(path)?;
            let start = state.frame_index;
            (
                VideoPipeline {
                    config,
                    probe: args.probe,
                    opts,
                    state,
                    merged,
                    last_fit_trace: None,
                },
                start,
            )
        }
        None => {
            let (cam0, _, depth0) = load_frame(&args.frames, &poses, 0)?;
            (VideoPipeline::new(&cam0, &depth0, args.probe, opts)?, 0)
        }
    };
    if start >= n_frames {
        return Err(CliError::Input("state is already past the end of the sequence".into()));
    }
    let gt = render_gt_envmap(&scene, args.probe, args.height, &pipeline.config.frame)?;

    let mut metrics = String::from("frame,log_l2_vs_gt,smoothness,coverage\n");
    let mut prev: Option<EquirectMap> = None;
    for i in start..n_frames {
        let (cam, img, depth) = load_frame(&args.frames, &poses, i)?;
        let targets = if args.iters > 0 {
            load_fit_targets(&args.frames, i)?
        } else {
            Vec::new()
        };
        let out = pipeline.step(&cam, &img, &depth, &targets)?;
        io::save_equirect(&args.out.join(format!("lighting_{i:04}.pfm")), &out)?;
        io::png::save_equirect_preview(&args.out.join(format!("lighting_{i:04}.png")), &out)?;

        let l2 = loss_log_l2(&out, &gt)?;
        let smooth = match &prev {
            Some(p) => loss_log_l2(&out, p)?,
            None => 0.0,
        };
        let cov = pipeline.state.coverage.data().iter().sum::<f64>()
            / pipeline.state.coverage.data().len() as f64;
        metrics.push_str(&format!("{i},{l2},{smooth},{cov}\n"));
        prev = Some(out);
    }
    fs::write(args.out.join("metrics.csv"), metrics)?;
    if let Some(path) = &args.state_out {
        save_state(path, &pipeline.state, pipeline.merged.as_ref(), &pipeline.config)?;
    }
    write_run_sidecar(&args.out, "video", args)?;
    println!(
        "processed frames {start}..{} -> {}",
        n_frames - 1,
        args.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------ state format
// Full-precision binary state: everything is little-endian f64 so resumed
// runs are bitwise identical to uninterrupted ones (the PFM/volume formats
// quantize to f32 and cannot serve as carriers).

const STATE_MAGIC: &[u8; 4] = b"SGST";

fn put_f64s(w: &mut impl Write, vals: &[f64]) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn save_state(
    path: &Path,
    state: &TemporalState,
    merged: Option<&SglvGrid>,
    config: &VolumeConfig,
) -> CliResult {
    let f = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    w.write_all(STATE_MAGIC)?;
    w.write_all(&(state.frame_index as u64).to_le_bytes())?;
    w.write_all(&(state.blended.height as u64).to_le_bytes())?;
    put_f64s(&mut w, state.blended.data())?;
    put_f64s(&mut w, state.depth.data())?;
    put_f64s(&mut w, state.coverage.data())?;
    let cfg = config;
    put_f64s(
        &mut w,
        &[
            cfg.x_range[0], cfg.x_range[1],
            cfg.y_range[0], cfg.y_range[1],
            cfg.z_range[0], cfg.z_range[1],
        ],
    )?;
    for n in [cfg.nx, cfg.ny, cfg.nz] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    let fr = &cfg.frame;
    put_f64s(
        &mut w,
        &[
            fr.origin.x, fr.origin.y, fr.origin.z,
            fr.right.x, fr.right.y, fr.right.z,
            fr.up.x, fr.up.y, fr.up.z,
            fr.backward.x, fr.backward.y, fr.backward.z,
        ],
    )?;
    w.write_all(&[u8::from(merged.is_some())])?;
    if let Some(vol) = merged {
        for g in [&vol.color, &vol.alpha, &vol.amplitude, &vol.bandwidth, &vol.axis] {
            put_f64s(&mut w, g.data())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn load_state(path: &Path) -> Result<(TemporalState, Option<SglvGrid>, VolumeConfig), CliError> {
    let f = fs::File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open state file: {e}")))?;
    let mut r = std::io::BufReader::new(f);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STATE_MAGIC {
        return Err(CliError::Input("not a state file (bad magic)".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let frame_index = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let height = u64::from_le_bytes(b8) as usize;
    let npix = height * 2 * height;
    let blended = EquirectMap::from_data(height, 3, get_f64s(&mut r, npix * 3)?)?;
    let depth = EquirectMap::from_data(height, 1, get_f64s(&mut r, npix)?)?;
    let coverage = EquirectMap::from_data(height, 1, get_f64s(&mut r, npix)?)?;
    let ranges = get_f64s(&mut r, 6)?;
    let mut counts = [0usize; 3];
    for c in &mut counts {
        r.read_exact(&mut b8)?;
        *c = u64::from_le_bytes(b8) as usize;
    }
    let pose = get_f64s(&mut r, 12)?;
    let config = VolumeConfig::custom(
        [ranges[0], ranges[1]],
        [ranges[2], ranges[3]],
        [ranges[4], ranges[5]],
        counts[0],
        counts[1],
        counts[2],
        Frame {
            origin: Vec3::new(pose[0], pose[1], pose[2]),
            right: Vec3::new(pose[3], pose[4], pose[5]),
            up: Vec3::new(pose[6], pose[7], pose[8]),
            backward: Vec3::new(pose[9], pose[10], pose[11]),
        },
    )?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let merged = if flag[0] == 1 {
        let mut vol = SglvGrid::empty(config.clone());
        let n = config.nx * config.ny * config.nz;
        for (g, ch) in [
            (&mut vol.color, 3usize),
            (&mut vol.alpha, 1),
            (&mut vol.amplitude, 3),
            (&mut vol.bandwidth, 1),
            (&mut vol.axis, 3),
        ] {
            g.data_mut().copy_from_slice(&get_f64s(&mut r, n * ch)?);
        }
        Some(vol)
    } else {
        None
    };
    let state = TemporalState { blended, depth, coverage, frame_index };
    Ok((state, merged, config))
}

// ------------------------------------------------------------ rendersphere

fn cmd_render_sphere(args: &RenderSphereArgs) -> CliResult {
    fs::create_dir_all(&args.out)?;
    let env = io::load_equirect(&args.env)?;
    if env.channels != 3 {
        return Err(CliError::Input("environment map must have 3 channels".into()));
    }
    if !env.data().iter().any(|v| *v > 1.0) {
        return Err(CliError::Input(
            "environment map appears to be LDR (no value above 1); HDR input expected".into(),
        ));
    }
    let brdf = MicrofacetBrdf::default();
    let modes: &[SampleMode] = match args.mode {
        SphereMode::Importance => &[SampleMode::Importance],
        SphereMode::Uniform => &[SampleMode::Uniform],
        SphereMode::Both => &[SampleMode::Importance, SampleMode::Uniform],
    };
    // high-spp reference on an independent stream for the MSE report
    let reference = render_sphere(
        &env,
        &brdf,
        &SphereRenderSpec {
            resolution: args.resolution,
            spp: args.ref_spp,
            mode: SampleMode::Importance,
            seed: args.seed ^ 0x9e37_79b9_7f4a_7c15,
        },
    )?;
    let mut csv = String::from("mode,spp,mse\n");
    for mode in modes {
        let name = match mode {
            SampleMode::Importance => "importance",
            SampleMode::Uniform => "uniform",
        };
        let img = render_sphere(
            &env,
            &brdf,
            &SphereRenderSpec {
                resolution: args.resolution,
                spp: args.spp,
                mode: *mode,
                seed: args.seed,
            },
        )?;
        io::save_hdr_image(&args.out.join(format!("sphere_{name}.pfm")), &img)?;
        io::png::save_hdr_preview(&args.out.join(format!("sphere_{name}.png")), &img)?;
        let mse = img
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / img.data().len() as f64;
        csv.push_str(&format!("{name},{},{mse}\n", args.spp));
    }
    fs::write(args.out.join("mse.csv"), csv)?;
    write_run_sidecar(&args.out, "render-sphere", args)?;
    println!("rendered {} mode(s) -> {}", modes.len(), args.out.display());
    Ok(())
}

// --------------------------------------------------------------- gradcheck

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult {
    if args.volumes == 0 || args.size == 0 {
        return Err(CliError::Input("--volumes and --size must be >= 1".into()));
    }
    let mut max_rel: f64 = 0.0;
    for v in 0..args.volumes {
        let cfg = VolumeConfig::custom(
            [0.0, 1.0],
            [0.0, 1.0],
            [0.0, 1.0],
            args.size,
            args.size,
            args.size,
            Frame::identity(),
        )?;
        let vol = random_sglv(cfg, args.seed.wrapping_add(v as u64));
        let target = random_envmap(args.height, args.seed.wrapping_add(1000 + v as u64));
        let probe = vol.config.volume_to_world(Vec3::new(0.5, 0.5, 0.5));
        let rel = grad_check(&vol, &[(probe, target)], args.eps)?;
        println!("volume {v}: max relative error {rel:.3e}");
        max_rel = max_rel.max(rel);
    }
    println!("overall max relative error {max_rel:.3e} (eps {})", args.eps);
    if max_rel < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "gradient check failed: {max_rel:.3e} >= {GRADCHECK_TOLERANCE:.0e}"
        )))
    }
}

fn random_envmap(height: usize, seed: u64) -> EquirectMap {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = EquirectMap::zeros(height, 3);
    for v in m.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    m
}
