//! Command-line front end. Every subcommand is also a plain library
//! function (`synth_cmd`, `train_cmd`, ...) so tests drive the exact code
//! paths the binary runs, in process.
//!
//! Exit codes: 0 success, 1 usage, 2 bad data, 3 training divergence.

use crate::checkpoint::{self, Checkpoint};
use crate::formats::{self, Manifest, Rig};
use crate::metrics::{self, MetricsReport};
use crate::pngio;
use crate::synth::{self, SynthConfig, SynthSummary};
use anyhow::{bail, Context};
use avatar_core::fields::HashGridConfig;
use avatar_core::training::TrainError;
use avatar_core::{
    BoundSplatModel64, Camera64, FrameData64, HashGridConfig64, LossWeights64, PoseFrame64,
    RasterConfig64, Trainer64,
};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "avatario",
    about = "Mesh-bound splat avatars: synthesize data, train, render, export, evaluate"
)]
pub struct Cli {
    /// Master seed; every random choice in a run derives from it.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file overriding built-in defaults; explicit flags win over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic rigged-capsule dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Train a model on a dataset manifest.
    Train {
        /// Path to manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Optimize per-frame poses alongside the model.
        #[arg(long)]
        refine_pose: bool,
        /// Override the normal-supervision weight (0 disables it).
        #[arg(long)]
        w_normal: Option<f64>,
    },
    /// Render one (camera, pose) frame from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Index into the camera and pose lists.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Output prefix; writes <prefix>_color.png, _normal.png, _mask.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a whole pose sequence from one fixed viewpoint.
    Animate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Camera index to render every pose from.
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Output directory, one image triple per pose.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the trained avatar as a colored mesh plus its rig.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's held-out frames.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics report path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
}

// ---------------------------------------------------------------------------
// Optional TOML config. Unknown keys are rejected so typos surface instead
// of silently doing nothing.

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub train: TrainSection,
    pub grid: GridSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub views: Option<usize>,
    pub resolution: Option<usize>,
    pub bump_amplitude: Option<f64>,
    pub bend_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub refine_pose: Option<bool>,
    pub lambda: Option<f64>,
    pub w_photo: Option<f64>,
    pub w_normal: Option<f64>,
    pub w_nc: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub levels: Option<usize>,
    pub table_size: Option<usize>,
    pub features: Option<usize>,
    pub base_resolution: Option<u32>,
    pub growth: Option<f64>,
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Hash-grid sized for a desk-scale subject; the AABB is replaced by the
/// template's padded bounds at model construction.
pub fn desk_grid() -> HashGridConfig64 {
    HashGridConfig {
        levels: 10,
        table_size: 1 << 13,
        features: 2,
        ..HashGridConfig::default()
    }
}

impl GridSection {
    pub fn resolve(&self) -> HashGridConfig64 {
        let base = desk_grid();
        HashGridConfig {
            levels: self.levels.unwrap_or(base.levels),
            table_size: self.table_size.unwrap_or(base.table_size),
            features: self.features.unwrap_or(base.features),
            base_resolution: self.base_resolution.unwrap_or(base.base_resolution),
            growth: self.growth.unwrap_or(base.growth),
            ..base
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommand implementations.

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub refine_pose: bool,
    pub weights: LossWeights64,
    pub grid: HashGridConfig64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub latest_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    /// Mean total loss per completed epoch, in order.
    pub epoch_means: Vec<f64>,
}

fn load_frames(manifest: &Manifest, include_holdout: bool) -> anyhow::Result<Vec<FrameData64>> {
    let mut frames = Vec::new();
    for (i, entry) in manifest.frames.iter().enumerate() {
        if !include_holdout && manifest.holdout.contains(&i) {
            continue;
        }
        let camera = manifest.cameras[i].clone();
        let (color, w, h) = pngio::load_color_png(&entry.color)?;
        if (w, h) != (camera.width, camera.height) {
            bail!(
                "frame {i}: color image is {w}x{h} but its camera expects {}x{}",
                camera.width,
                camera.height
            );
        }
        let normal = match &entry.normal {
            Some(p) => Some(pngio::load_normal_png(p)?.0),
            None => None,
        };
        let mask = match &entry.mask {
            Some(p) => Some(pngio::load_mask_png(p)?.0),
            None => None,
        };
        frames.push(FrameData64 {
            camera,
            pose: manifest.poses[i].clone(),
            color,
            normal,
            mask,
        });
    }
    if frames.is_empty() {
        bail!("no frames to load from {}", manifest.dir.display());
    }
    Ok(frames)
}

pub fn train_cmd(args: &TrainArgs) -> anyhow::Result<TrainSummary> {
    let manifest = formats::load_manifest(&args.data)?;
    let rig = formats::load_template(&manifest.template)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let model = BoundSplatModel64::new(
        rig.mesh,
        rig.skeleton,
        rig.weights,
        args.grid.clone(),
        args.seed,
    )?;
    let options = avatar_core::training::TrainOptions {
        max_epoch: args.epochs,
        refine_pose: args.refine_pose,
    };
    let mut trainer = Trainer64::new(model, RasterConfig64::default(), args.weights, options);
    let mut frames = load_frames(&manifest, false)?;

    let loss_csv = args.out.join("loss.csv");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&loss_csv)
            .with_context(|| format!("creating {}", loss_csv.display()))?,
    );
    writeln!(csv, "epoch,iter,l_rgb,l_normal,l_nc,total")?;

    let latest = args.out.join("checkpoint_latest.ckpt");
    let mut epoch_means = Vec::with_capacity(args.epochs);
    for epoch in 1..=args.epochs {
        let stats = trainer.train_epoch(&mut frames, epoch).with_context(|| {
            format!(
                "epoch {epoch} failed; last good checkpoint: {}",
                if epoch > 1 {
                    latest.display().to_string()
                } else {
                    "none".into()
                }
            )
        })?;
        for row in &stats.rows {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                row.epoch, row.iter, row.rgb, row.normal, row.nc, row.total
            )?;
        }
        csv.flush()?;
        checkpoint::save_checkpoint(
            &latest,
            &Checkpoint {
                seed: args.seed,
                epoch,
                model: trainer.model.clone(),
            },
        )?;
        epoch_means.push(stats.mean_total);
        println!(
            "epoch {epoch}/{}: mean total loss {:.6}",
            args.epochs, stats.mean_total
        );
    }

    let final_checkpoint = args.out.join("checkpoint_final.ckpt");
    checkpoint::save_checkpoint(
        &final_checkpoint,
        &Checkpoint {
            seed: args.seed,
            epoch: args.epochs,
            model: trainer.model.clone(),
        },
    )?;
    Ok(TrainSummary {
        final_checkpoint,
        latest_checkpoint: latest,
        loss_csv,
        epoch_means,
    })
}

fn load_rig_inputs(
    checkpoint: &Path,
    cameras: &Path,
    poses: &Path,
) -> anyhow::Result<(Checkpoint, Vec<Camera64>, Vec<PoseFrame64>)> {
    let ckpt = checkpoint::load_checkpoint(checkpoint)?;
    let cameras = formats::load_cameras(cameras)?;
    let poses = formats::load_poses(poses)?;
    Ok((ckpt, cameras, poses))
}

/// Renders one frame and writes the color/normal/mask triple at `prefix`.
/// Shared by `render` and `animate` so the two can never drift apart.
pub fn render_frame_files(
    model: &BoundSplatModel64,
    camera: &Camera64,
    pose: &PoseFrame64,
    prefix: &Path,
) -> anyhow::Result<()> {
    let fwd = model.forward_frame(camera, pose, &RasterConfig64::default())?;
    let (w, h) = (camera.width, camera.height);
    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let sibling = |suffix: &str| prefix.with_file_name(format!("{stem}_{suffix}.png"));
    if let Some(parent) = prefix.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    pngio::save_color_png(&sibling("color"), &fwd.image.color, w, h)?;
    pngio::save_normal_png(&sibling("normal"), &fwd.image.normal, w, h)?;
    let mask: Vec<bool> = fwd.image.alpha.iter().map(|&a| a >= 0.5).collect();
    pngio::save_mask_png(&sibling("mask"), &mask, w, h)?;
    Ok(())
}

pub fn render_cmd(
    checkpoint: &Path,
    cameras: &Path,
    poses: &Path,
    frame: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let (ckpt, cameras, poses) = load_rig_inputs(checkpoint, cameras, poses)?;
    if frame >= cameras.len() || frame >= poses.len() {
        bail!(
            "frame {frame} out of range: {} cameras, {} poses",
            cameras.len(),
            poses.len()
        );
    }
    render_frame_files(&ckpt.model, &cameras[frame], &poses[frame], out)
}

pub fn animate_cmd(
    checkpoint: &Path,
    cameras: &Path,
    poses: &Path,
    view: usize,
    out: &Path,
) -> anyhow::Result<usize> {
    let (ckpt, cameras, poses) = load_rig_inputs(checkpoint, cameras, poses)?;
    if view >= cameras.len() {
        bail!("view {view} out of range: {} cameras", cameras.len());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, pose) in poses.iter().enumerate() {
        render_frame_files(
            &ckpt.model,
            &cameras[view],
            pose,
            &out.join(format!("frame_{i:03}")),
        )?;
    }
    Ok(poses.len())
}

pub fn export_cmd(checkpoint: &Path, out: &Path) -> anyhow::Result<()> {
    let ckpt = checkpoint::load_checkpoint(checkpoint)?;
    let mesh = ckpt.model.canonical_mesh()?;
    let colors = ckpt.model.face_colors();
    let rig = Rig {
        mesh,
        skeleton: ckpt.model.skeleton().clone(),
        weights: ckpt.model.skin_weights().clone(),
    };
    formats::save_colored_mesh(out, &rig, &colors)?;
    Ok(())
}

pub fn eval_cmd(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    seed: u64,
) -> anyhow::Result<MetricsReport> {
    let ckpt = checkpoint::load_checkpoint(checkpoint)?;
    let manifest = formats::load_manifest(data)?;
    let eval_indices: Vec<usize> = if manifest.holdout.is_empty() {
        (0..manifest.frames.len()).collect()
    } else {
        manifest.holdout.clone()
    };

    let cfg = RasterConfig64::default();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for &i in &eval_indices {
        let camera = &manifest.cameras[i];
        let fwd = ckpt.model.forward_frame(camera, &manifest.poses[i], &cfg)?;
        // Both sides of the comparison live on the 8-bit grid the dataset
        // was stored at.
        let pred = pngio::quantize_color_plane(&fwd.image.color);
        let (target, w, h) = pngio::load_color_png(&manifest.frames[i].color)?;
        if (w, h) != (camera.width, camera.height) {
            bail!("frame {i}: stored image {w}x{h} does not match camera");
        }
        psnr_sum += metrics::psnr_db(&pred, &target)?;
        ssim_sum += metrics::ssim(&pred, &target, w, h)?;
    }
    let n = eval_indices.len() as f64;

    let canonical = ckpt.model.canonical_mesh()?;
    let v2v_mm = match &manifest.gt_mesh {
        Some(path) => {
            let (gt_rig, _) = formats::load_colored_mesh(path)?;
            Some(metrics::v2v_mm(
                &canonical,
                &gt_rig.mesh,
                metrics::V2V_SAMPLES,
                seed,
            )?)
        }
        None => None,
    };
    let (nc, _) = avatar_core::losses::normal_consistency(
        canonical.vertices(),
        &canonical,
        ckpt.model.adjacency(),
    );

    let report = MetricsReport {
        psnr_db: psnr_sum / n,
        ssim: ssim_sum / n,
        v2v_mm,
        baseline_v2v_mm: manifest.baseline_v2v_mm,
        nc,
    };
    report.write(out)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Dispatch.

fn dispatch(cli: Cli, config: &RunConfig) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            views,
            resolution,
        } => {
            let defaults = SynthConfig::default();
            let synth_config = SynthConfig {
                views: views.or(config.synth.views).unwrap_or(defaults.views),
                resolution: resolution
                    .or(config.synth.resolution)
                    .unwrap_or(defaults.resolution),
                seed: cli.seed,
                bump_amplitude: config
                    .synth
                    .bump_amplitude
                    .unwrap_or(defaults.bump_amplitude),
                bend_amplitude: config
                    .synth
                    .bend_amplitude
                    .unwrap_or(defaults.bend_amplitude),
                ..defaults
            };
            let SynthSummary {
                manifest,
                baseline_v2v_mm,
                frames,
                coarse_faces,
                fine_faces,
            } = synth::synth_dataset(&out, &synth_config)?;
            println!(
                "wrote {frames} frames to {} (template {coarse_faces} faces, \
                 ground truth {fine_faces} faces, baseline v2v {baseline_v2v_mm:.3} mm)",
                manifest.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            epochs,
            refine_pose,
            w_normal,
        } => {
            let defaults = LossWeights64::default();
            let weights = LossWeights64 {
                lambda: config.train.lambda.unwrap_or(defaults.lambda),
                w_photo: config.train.w_photo.unwrap_or(defaults.w_photo),
                w_normal: w_normal
                    .or(config.train.w_normal)
                    .unwrap_or(defaults.w_normal),
                w_nc: config.train.w_nc.unwrap_or(defaults.w_nc),
            };
            let args = TrainArgs {
                data,
                out,
                seed: cli.seed,
                epochs: epochs.or(config.train.epochs).unwrap_or(20),
                refine_pose: refine_pose || config.train.refine_pose.unwrap_or(false),
                weights,
                grid: config.grid.resolve(),
            };
            let summary = train_cmd(&args)?;
            println!(
                "trained {} epochs; final checkpoint {}",
                summary.epoch_means.len(),
                summary.final_checkpoint.display()
            );
            Ok(())
        }
        Command::Render {
            checkpoint,
            cameras,
            poses,
            frame,
            out,
        } => render_cmd(&checkpoint, &cameras, &poses, frame, &out),
        Command::Animate {
            checkpoint,
            cameras,
            poses,
            view,
            out,
        } => {
            let n = animate_cmd(&checkpoint, &cameras, &poses, view, &out)?;
            println!("rendered {n} frames to {}", out.display());
            Ok(())
        }
        Command::Export { checkpoint, out } => {
            export_cmd(&checkpoint, &out)?;
            println!("exported avatar to {}", out.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            out,
        } => {
            let report = eval_cmd(&checkpoint, &data, &out, cli.seed)?;
            let v2v = report
                .v2v_mm
                .map(|v| format!("{v:.3} mm"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "psnr {:.2} dB, ssim {:.4}, v2v {v2v}, report {}",
                report.psnr_db,
                report.ssim,
                out.display()
            );
            Ok(())
        }
    }
}

fn classify(err: &anyhow::Error) -> i32 {
    let diverged = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<TrainError>(),
            Some(TrainError::Diverged { .. })
        )
    });
    if diverged {
        EXIT_DIVERGED
    } else {
        EXIT_DATA
    }
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        // Only the first global-pool build can win; later calls are no-ops.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_DATA;
        }
    };
    match dispatch(cli, &config) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            classify(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let config: RunConfig = toml::from_str(
            "[synth]\nviews = 5\n[train]\nepochs = 7\nw_normal = 0.25\n[grid]\nlevels = 6\n",
        )
        .unwrap();
        assert_eq!(config.synth.views, Some(5));
        assert_eq!(config.train.epochs, Some(7));
        assert_eq!(config.grid.resolve().levels, 6);
        assert_eq!(config.grid.resolve().table_size, 1 << 13);

        let cli = parse(&["avatario", "synth", "--out", "x", "--views", "9"]);
        match cli.command {
            Command::Synth { views, .. } => assert_eq!(views, Some(9)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[train]\nepoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn seed_is_global_and_defaults() {
        let cli = parse(&[
            "avatario",
            "eval",
            "--checkpoint",
            "c",
            "--data",
            "d",
            "--out",
            "o",
        ]);
        assert_eq!(cli.seed, 7);
        let cli = parse(&[
            "avatario", "train", "--data", "d", "--out", "o", "--seed", "11",
        ]);
        assert_eq!(cli.seed, 11);
    }

    #[test]
    fn missing_data_is_a_data_error() {
        let cli = parse(&[
            "avatario",
            "train",
            "--data",
            "/nonexistent/manifest.json",
            "--out",
            "/tmp/should-not-appear",
        ]);
        assert_eq!(run(cli), EXIT_DATA);
    }
}
