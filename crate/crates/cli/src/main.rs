use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tstereo::camera::{format_pose_file, CameraModel};
use tstereo::evalrun::{
    compute_metrics, gradient_suite, run_sequence, MetricsReport, Mode, PipelineConfig,
    PipelineWeights, RegionMetrics, SequenceFrame, StereoFrame,
};
use tstereo::io::pnm::{error_colormap, gray_to_rgb};
use tstereo::io::{
    parse_manifest, parse_weights, read_pfm, read_pnm, write_pfm, write_pgm, write_ppm,
};
use tstereo::synth::{generate_sequence, SceneSize, SceneSpec, Trajectory, DEFAULT_BASELINE};
use tstereo::{DisparityMap, Pipeline, Tensor};

#[derive(Parser)]
#[command(
    name = "tstereo",
    version,
    about = "Coarse-to-fine stereo with optional temporal fusion"
)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Shared {
    /// TOML pipeline configuration; flags below override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dmax: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    topk: Option<usize>,
    #[arg(long, global = true)]
    nkey: Option<usize>,
    /// Keyframe translation threshold in meters
    #[arg(long, global = true)]
    tmax: Option<f64>,
    /// Keyframe rotation threshold in degrees
    #[arg(long, global = true)]
    rmax: Option<f64>,
    /// Rotation noise sigma in degrees
    #[arg(long, global = true)]
    pose_noise_rot: Option<f64>,
    /// Translation noise sigma in meters
    #[arg(long, global = true)]
    pose_noise_trans: Option<f64>,
    /// Text weight file
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Single,
    Temporal,
}

#[derive(Subcommand)]
enum Cmd {
    /// Disparity of one rectified pair
    Single {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sequence manifest and write one PFM per frame
    Temporal {
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        window: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Temporal)]
        mode: ModeArg,
        /// Intrinsics file; defaults to intrinsics.txt next to the manifest
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Process every frame, not only the window
        #[arg(long)]
        streaming: bool,
    },
    /// Render a synthetic scene or sequence described by a TOML file
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare a predicted PFM against ground truth
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// PGM mask, non-zero marks occluded pixels
        #[arg(long)]
        occ_mask: Option<PathBuf>,
        /// Write a color-mapped error image
        #[arg(long)]
        error_map: Option<PathBuf>,
    },
    /// Finite-difference check of every analytic gradient
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    scene: SceneSpec,
    #[serde(default = "static_trajectory")]
    trajectory: Trajectory,
    #[serde(default = "one")]
    frames: usize,
    height: usize,
    width: usize,
    #[serde(default = "default_baseline")]
    baseline: f64,
    #[serde(default)]
    seed: u64,
}

fn static_trajectory() -> Trajectory {
    Trajectory::Static
}

fn one() -> usize {
    1
}

fn default_baseline() -> f64 {
    DEFAULT_BASELINE
}

fn load_config(s: &Shared) -> Result<PipelineConfig> {
    let mut cfg = match &s.config {
        Some(p) => PipelineConfig::from_toml(&read_text(p)?)
            .with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = s.seed {
        cfg.seed = v;
    }
    if let Some(v) = s.dmax {
        cfg.d_max = v;
    }
    if let Some(v) = s.beta {
        cfg.beta = v;
    }
    if let Some(v) = s.topk {
        cfg.top_k = v;
    }
    if let Some(v) = s.nkey {
        cfg.n_key = v;
    }
    if let Some(v) = s.tmax {
        cfg.t_max = v;
    }
    if let Some(v) = s.rmax {
        cfg.r_max_deg = v;
    }
    if let Some(v) = s.pose_noise_rot {
        cfg.pose_noise.rot_deg = v;
    }
    if let Some(v) = s.pose_noise_trans {
        cfg.pose_noise.trans = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_weights(s: &Shared, cfg: &PipelineConfig) -> Result<PipelineWeights> {
    match &s.weights {
        None => Ok(PipelineWeights::handcrafted(cfg)),
        Some(p) => {
            let set = parse_weights(&read_text(p)?)
                .with_context(|| format!("weights {}", p.display()))?;
            Ok(PipelineWeights::from_weight_set(cfg, &set)?)
        }
    }
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn read_gray(p: &Path) -> Result<Tensor> {
    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(read_pnm(&bytes)
        .with_context(|| format!("decoding {}", p.display()))?
        .to_gray())
}

/// Non-finite samples become invalid pixels.
fn read_disparity(p: &Path) -> Result<DisparityMap> {
    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    let pfm = read_pfm(&bytes).with_context(|| format!("decoding {}", p.display()))?;
    if pfm.channels != 1 {
        bail!("{} has {} channels, expected 1", p.display(), pfm.channels);
    }
    let vals: Vec<f64> = pfm.data.iter().map(|&v| v as f64).collect();
    let valid: Vec<bool> = vals.iter().map(|v| v.is_finite()).collect();
    let vals = vals
        .into_iter()
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    Ok(DisparityMap::with_mask(
        Tensor::new(vec![pfm.height, pfm.width], vals)?,
        1,
        valid,
    )?)
}

fn write(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn write_disparity(p: &Path, d: &DisparityMap) -> Result<()> {
    write(p, &write_pfm(d.width(), d.height(), d.values.data()))
}

fn print_region(name: &str, m: Option<&RegionMetrics>) {
    match m {
        Some(m) => println!(
            "{name:<4} epe {:.4}  3pe {:.2}%  5pe {:.2}%  d1 {:.2}%  ({} px)",
            m.epe, m.pe3, m.pe5, m.d1, m.count
        ),
        None => println!("{name:<4} (no pixels)"),
    }
}

fn print_metrics(m: &MetricsReport) {
    print_region("all", Some(&m.all));
    print_region("occ", m.occ.as_ref());
    print_region("noc", m.noc.as_ref());
}

fn run_single(s: &Shared, left: &Path, right: &Path, out: &Path) -> Result<()> {
    let mut cfg = load_config(s)?;
    cfg.mode = Mode::Single;
    let weights = load_weights(s, &cfg)?;
    let pipe = Pipeline::new(cfg, weights, None)?;
    let mut state = pipe.new_state()?;
    let frame = StereoFrame {
        left: read_gray(left)?,
        right: read_gray(right)?,
        pose: None,
        frame_index: 0,
    };
    let res = pipe.run_frame(&frame, &mut state)?;
    write_disparity(out, &res.disparity)
}

fn run_temporal(
    s: &Shared,
    manifest: &Path,
    window: usize,
    mode: ModeArg,
    intrinsics: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    streaming: bool,
) -> Result<()> {
    let mut cfg = load_config(s)?;
    cfg.window = window;
    cfg.streaming = streaming;
    cfg.mode = match mode {
        ModeArg::Single => Mode::Single,
        ModeArg::Temporal => Mode::Temporal,
    };
    let weights = load_weights(s, &cfg)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&read_text(manifest)?)
        .with_context(|| format!("manifest {}", manifest.display()))?;
    let cam_path = intrinsics.unwrap_or_else(|| base.join("intrinsics.txt"));
    let camera = match (cfg.mode, cam_path.exists()) {
        (_, true) => Some(CameraModel::parse(&read_text(&cam_path)?)?),
        (Mode::Temporal, false) => bail!(
            "temporal mode needs intrinsics, {} not found",
            cam_path.display()
        ),
        (Mode::Single, false) => None,
    };
    let mut frames = Vec::with_capacity(entries.len());
    for e in &entries {
        let left = read_gray(&base.join(&e.left))?;
        let right = read_gray(&base.join(&e.right))?;
        frames.push(SequenceFrame {
            left,
            right,
            pose: Some(e.pose),
            gt: None,
            occlusion: None,
        });
    }
    let report = run_sequence(&frames, camera, &cfg, &weights)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, o) in report.outputs.iter().enumerate() {
            write_disparity(&dir.join(format!("disp_{i:04}.pfm")), &o.disparity)?;
        }
    }
    for (i, o) in report.outputs.iter().enumerate() {
        let d = o.disparity.values.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        println!(
            "frame {i}: mean disparity {mean:.3}, keyframe {}",
            o.promoted
        );
    }
    Ok(())
}

fn run_synth(spec: &Path, out_dir: &Path) -> Result<()> {
    let req: SynthFile = toml::from_str(&read_text(spec)?)
        .with_context(|| format!("synth spec {}", spec.display()))?;
    let size = SceneSize {
        baseline: req.baseline,
        ..SceneSize::new(req.height, req.width)
    };
    let seq = generate_sequence(&req.scene, &req.trajectory, req.frames, req.seed, size)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = String::new();
    let mut poses = Vec::new();
    for f in &seq.frames {
        let k = f.frame_index;
        let (h, w) = (f.gt.height(), f.gt.width());
        let (l, r) = (format!("left_{k:04}.ppm"), format!("right_{k:04}.ppm"));
        write(&out_dir.join(&l), &write_ppm(w, h, &gray_to_rgb(&f.left)))?;
        write(&out_dir.join(&r), &write_ppm(w, h, &gray_to_rgb(&f.right)))?;
        let gt: Vec<f64> = (0..h * w)
            .map(|i| {
                if f.gt.is_valid(i) {
                    f.gt.values.data()[i]
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        write(
            &out_dir.join(format!("disp_{k:04}.pfm")),
            &write_pfm(w, h, &gt),
        )?;
        let occ = Tensor::new(
            vec![h, w],
            f.occlusion.iter().map(|&o| o as u8 as f64).collect(),
        )?;
        write(&out_dir.join(format!("occ_{k:04}.pgm")), &write_pgm(&occ))?;
        if let Some(seen) = &f.previously_visible {
            let m = Tensor::new(vec![h, w], seen.iter().map(|&o| o as u8 as f64).collect())?;
            write(&out_dir.join(format!("seen_{k:04}.pgm")), &write_pgm(&m))?;
        }
        let p: Vec<String> = f
            .pose
            .to_row_major()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        manifest.push_str(&format!("{l} {r} {}\n", p.join(" ")));
        poses.push(f.pose);
    }
    write(&out_dir.join("manifest.txt"), manifest.as_bytes())?;
    write(
        &out_dir.join("poses.txt"),
        format_pose_file(&poses).as_bytes(),
    )?;
    write(
        &out_dir.join("intrinsics.txt"),
        format!("{}\n", seq.frames[0].camera.to_line()).as_bytes(),
    )?;
    if seq.degenerate {
        eprintln!("warning: trajectory does not move the camera");
    }
    println!("wrote {} frames to {}", seq.frames.len(), out_dir.display());
    Ok(())
}

fn run_eval(
    pred: &Path,
    gt: &Path,
    occ: Option<PathBuf>,
    error_map: Option<PathBuf>,
) -> Result<()> {
    let p = read_disparity(pred)?;
    let g = read_disparity(gt)?;
    let mask = match occ {
        Some(path) => Some(
            read_gray(&path)?
                .data()
                .iter()
                .map(|&v| v > 0.0)
                .collect::<Vec<bool>>(),
        ),
        None => None,
    };
    let m = compute_metrics(&p, &g, mask.as_deref())?;
    print_metrics(&m);
    if let Some(path) = error_map {
        let err: Vec<f64> = (0..g.values.len())
            .map(|i| {
                if g.is_valid(i) {
                    (p.values.data()[i] - g.values.data()[i]).abs()
                } else {
                    0.0
                }
            })
            .collect();
        write(
            &path,
            &write_ppm(g.width(), g.height(), &error_colormap(&err, 5.0)),
        )?;
    }
    Ok(())
}

fn run_gradcheck(step: f64, seeds: u64) -> Result<()> {
    let rep = gradient_suite(0..seeds, step)?;
    for (name, e) in rep.entries() {
        println!("{name:<12} max rel err {e:.3e}");
    }
    if rep.worst() >= 1e-5 {
        bail!(
            "gradient check failed: worst relative error {:.3e}",
            rep.worst()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Single { left, right, out } => run_single(&cli.shared, &left, &right, &out),
        Cmd::Temporal {
            manifest,
            window,
            mode,
            intrinsics,
            out_dir,
            streaming,
        } => run_temporal(
            &cli.shared,
            &manifest,
            window,
            mode,
            intrinsics,
            out_dir,
            streaming,
        ),
        Cmd::Synth { spec, out_dir } => run_synth(&spec, &out_dir),
        Cmd::Eval {
            pred,
            gt,
            occ_mask,
            error_map,
        } => run_eval(&pred, &gt, occ_mask, error_map),
        Cmd::Gradcheck { step, seeds } => run_gradcheck(step, seeds),
    }
}
