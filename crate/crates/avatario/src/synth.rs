//! Synthetic rigged-scene generator: a textured two-bone capsule with bumpy
//! displacement ground truth, rendered to turntable views by this
//! repository's own rasterizer.
//!
//! The dataset carries a coarse smooth template (the trainee's starting
//! point) and renders made from a finer, bump-displaced version of the same
//! capsule (the ground truth). The gap between them, recorded as
//! `baseline_v2v_mm`, is what training must close. Everything is a pure
//! function of the config, so regenerating a dataset is byte-identical.

use crate::formats::{self, FormatError, FrameEntry, ManifestFile, Rig, MANIFEST_SCHEMA};
use crate::metrics::{self, MetricError};
use crate::pngio::{self, PngError};
use avatar_core::geometry::{build_covariance, build_face_frame, lift_rotation};
use avatar_core::skinning::{
    bone_transforms, skin_vertices, PoseFrame, RigidTransform, Skeleton, SkinWeights, SkinningError,
};
use avatar_core::splatting::{composite, project_splat, sort_splats, ImagePlane, SplatScreen};
use avatar_core::{Camera64, PoseFrame64, RasterConfig64, TemplateMesh64};
use nalgebra::{Vector2, Vector3};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CAPSULE_RADIUS: f64 = 0.12;
pub const CAPSULE_CYLINDER: f64 = 0.5;
pub const CAPSULE_HEIGHT: f64 = CAPSULE_CYLINDER + 2.0 * CAPSULE_RADIUS;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Png(#[from] PngError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Skinning(#[from] SkinningError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub views: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Longitude columns / latitude rows of the coarse template.
    pub coarse_cols: usize,
    pub coarse_rows: usize,
    /// Same for the ground-truth mesh; finer so GT carries real detail.
    pub fine_cols: usize,
    pub fine_rows: usize,
    /// Peak radial bump displacement in meters.
    pub bump_amplitude: f64,
    /// Peak elbow bend of the pose sweep, radians.
    pub bend_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            views: 20,
            resolution: 64,
            seed: 7,
            coarse_cols: 32,
            coarse_rows: 33,
            fine_cols: 64,
            fine_rows: 65,
            bump_amplitude: 0.025,
            bend_amplitude: 0.35,
        }
    }
}

/// Direction from the capsule axis segment to `p`; the outward normal of a
/// smooth capsule, well defined at the poles too.
fn outward(p: &Vector3<f64>) -> Vector3<f64> {
    let axis_y = p.y.clamp(CAPSULE_RADIUS, CAPSULE_RADIUS + CAPSULE_CYLINDER);
    let d = p - Vector3::new(0.0, axis_y, 0.0);
    let n = d.norm();
    if n > 1e-12 {
        d / n
    } else {
        Vector3::new(0.0, -1.0, 0.0)
    }
}

/// Lat-long capsule standing on the origin, axis +y, poles as single
/// vertices. `rows` counts vertex rings including both poles.
pub fn capsule_mesh(cols: usize, rows: usize) -> TemplateMesh64 {
    assert!(cols >= 3 && rows >= 4, "capsule needs cols >= 3, rows >= 4");
    let r = CAPSULE_RADIUS;
    let cap_arc = std::f64::consts::FRAC_PI_2 * r;
    let total_arc = 2.0 * cap_arc + CAPSULE_CYLINDER;
    let profile = |t: f64| -> (f64, f64) {
        // Returns (radius, height) at normalized arc length t.
        let s = t * total_arc;
        if s <= cap_arc {
            let phi = -std::f64::consts::FRAC_PI_2 + s / r;
            (r * phi.cos(), r + r * phi.sin())
        } else if s <= cap_arc + CAPSULE_CYLINDER {
            (r, r + (s - cap_arc))
        } else {
            let phi = (s - cap_arc - CAPSULE_CYLINDER) / r;
            (r * phi.cos(), r + CAPSULE_CYLINDER + r * phi.sin())
        }
    };
    let mut vertices = vec![Vector3::new(0.0, 0.0, 0.0)];
    for i in 1..rows - 1 {
        let t = i as f64 / (rows - 1) as f64;
        let (rho, y) = profile(t);
        for j in 0..cols {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / cols as f64;
            vertices.push(Vector3::new(rho * theta.cos(), y, rho * theta.sin()));
        }
    }
    let top = vertices.len();
    vertices.push(Vector3::new(0.0, CAPSULE_HEIGHT, 0.0));

    let ring = |i: usize, j: usize| 1 + (i - 1) * cols + (j % cols);
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for j in 0..cols {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..rows - 2 {
        for j in 0..cols {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    for j in 0..cols {
        faces.push([top, ring(rows - 2, j + 1), ring(rows - 2, j)]);
    }
    // Orient every face outward so normals agree with the smooth surface.
    for f in &mut faces {
        let c = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        if n.dot(&outward(&c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    TemplateMesh64::new(vertices, faces).expect("capsule mesh is valid")
}

/// Two joints on the axis; weights blend across a band around the upper
/// joint so posing bends the capsule there.
pub fn capsule_rig(mesh: TemplateMesh64) -> Rig {
    let j0 = Vector3::new(0.0, 0.20, 0.0);
    let j1 = Vector3::new(0.0, 0.47, 0.0);
    let skeleton = Skeleton::new(vec![j0, j1], vec![None, Some(0)]).unwrap();
    let band = 0.10;
    let dense: Vec<Vec<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| {
            let t = ((v.y - (j1.y - band)) / (2.0 * band)).clamp(0.0, 1.0);
            let s = t * t * (3.0 - 2.0 * t);
            vec![1.0 - s, s]
        })
        .collect();
    let weights = SkinWeights::from_dense(&dense, 2).unwrap();
    Rig {
        mesh,
        skeleton,
        weights,
    }
}

/// Ground-truth radial bump field, canonical space. Fades to zero at the
/// poles where the angular coordinate degenerates.
pub fn bump_displacement(p: &Vector3<f64>, amplitude: f64) -> Vector3<f64> {
    let rho = (p.x * p.x + p.z * p.z).sqrt();
    let theta = p.z.atan2(p.x);
    let fade = (rho / CAPSULE_RADIUS).clamp(0.0, 1.0);
    let fade = fade * fade * (3.0 - 2.0 * fade);
    let wave =
        (2.0 * std::f64::consts::PI * 3.0 * p.y / CAPSULE_HEIGHT).sin() * (4.0 * theta).cos();
    outward(p) * (amplitude * fade * wave)
}

/// Smooth ground-truth albedo, a function of canonical position.
pub fn texture(p: &Vector3<f64>) -> Vector3<f64> {
    let theta = p.z.atan2(p.x);
    let y = p.y;
    Vector3::new(
        0.5 + 0.45 * (2.0 * theta + 10.0 * y).sin(),
        0.5 + 0.45 * (3.0 * theta - 7.0 * y + 1.0).sin(),
        0.5 + 0.45 * (theta + 13.0 * y + 2.0).sin(),
    )
}

/// Pinhole camera at `eye` looking at `target`, y-down image convention.
pub fn look_at_camera(
    eye: Vector3<f64>,
    target: Vector3<f64>,
    focal: f64,
    resolution: usize,
) -> Camera64 {
    let f = (target - eye).normalize();
    let up = Vector3::new(0.0, 1.0, 0.0);
    let mut d = f * f.dot(&up) - up;
    if d.norm() < 1e-9 {
        d = Vector3::new(0.0, 0.0, 1.0);
    }
    let d = d.normalize();
    let r = d.cross(&f);
    let rotation = nalgebra::Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
    Camera64 {
        world_to_camera: RigidTransform {
            rotation,
            translation: -rotation * eye,
        },
        fx: focal,
        fy: focal,
        cx: resolution as f64 / 2.0,
        cy: resolution as f64 / 2.0,
        width: resolution,
        height: resolution,
    }
}

pub fn turntable_cameras(n: usize, resolution: usize) -> Vec<Camera64> {
    let target = Vector3::new(0.0, CAPSULE_HEIGHT / 2.0, 0.0);
    let elevation = 0.26f64;
    let radius = 1.4;
    // Fill most of the frame height with the subject; loose framing starves
    // the geometry losses of pixels.
    let focal = 1.7 * resolution as f64;
    (0..n)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let eye = target
                + Vector3::new(
                    radius * elevation.cos() * az.cos(),
                    radius * elevation.sin(),
                    radius * elevation.cos() * az.sin(),
                );
            look_at_camera(eye, target, focal, resolution)
        })
        .collect()
}

pub fn pose_sweep(n: usize, bend_amplitude: f64) -> Vec<PoseFrame64> {
    (0..n)
        .map(|k| {
            let phase = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            PoseFrame {
                joint_rotations: vec![
                    Vector3::zeros(),
                    Vector3::new(0.0, 0.0, bend_amplitude * phase.sin()),
                ],
                translation: Vector3::zeros(),
            }
        })
        .collect()
}

/// One flat splat per face of an arbitrarily posed mesh, using the same
/// binding geometry as the trained model (normal axis pinned to 1e-3,
/// tangent scales from the face area).
pub fn mesh_splats(
    mesh: &TemplateMesh64,
    positions: &[Vector3<f64>],
    colors: &[Vector3<f64>],
    camera: &Camera64,
    cfg: &RasterConfig64,
) -> Vec<SplatScreen<f64>> {
    let mut splats = Vec::new();
    for (f, face) in mesh.faces().iter().enumerate() {
        let (v0, v1, v2) = (positions[face[0]], positions[face[1]], positions[face[2]]);
        let Some(frame) = build_face_frame(v0, v1, v2) else {
            continue;
        };
        let rotation = lift_rotation(&frame, Vector2::new(1.0, 0.0)).expect("unit rot2d");
        let s = mesh.face_area(positions, f).sqrt().max(1e-4) * 0.5;
        let sigma = build_covariance(&rotation, Vector3::new(1e-3, s, s)).expect("positive scales");
        let centroid = (v0 + v1 + v2) / 3.0;
        let Some(mut splat) = project_splat(&centroid, &sigma, camera, cfg) else {
            continue;
        };
        splat.color = colors[f];
        splat.normal = frame.r0;
        splat.splat_id = f;
        splats.push(splat);
    }
    sort_splats(&mut splats);
    splats
}

/// Renders the ground-truth mesh in a pose: color, normal and alpha planes.
pub fn render_gt(
    mesh: &TemplateMesh64,
    positions: &[Vector3<f64>],
    colors: &[Vector3<f64>],
    camera: &Camera64,
    cfg: &RasterConfig64,
) -> ImagePlane<f64> {
    let splats = mesh_splats(mesh, positions, colors, camera, cfg);
    composite(&splats, cfg, camera.width, camera.height)
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub baseline_v2v_mm: f64,
    pub frames: usize,
    pub coarse_faces: usize,
    pub fine_faces: usize,
}

/// The ground-truth side of a dataset: bumped fine mesh, per-face colors,
/// rig. Also what `eval` compares against.
pub struct GroundTruth {
    pub rig: Rig,
    pub colors: Vec<Vector3<f64>>,
}

pub fn ground_truth(config: &SynthConfig) -> GroundTruth {
    let smooth = capsule_mesh(config.fine_cols, config.fine_rows);
    let bumped: Vec<Vector3<f64>> = smooth
        .vertices()
        .iter()
        .map(|v| v + bump_displacement(v, config.bump_amplitude))
        .collect();
    let mesh = TemplateMesh64::new(bumped, smooth.faces().to_vec()).expect("bumped capsule valid");
    let colors: Vec<Vector3<f64>> = (0..mesh.face_count())
        .map(|f| texture(&mesh.face_centroid(mesh.vertices(), f)))
        .collect();
    let rig = capsule_rig(mesh);
    GroundTruth { rig, colors }
}

/// Generates the full dataset under `out`: template, ground-truth mesh,
/// cameras, poses, rendered frames, manifest with the recorded baseline.
pub fn synth_dataset(out: &Path, config: &SynthConfig) -> Result<SynthSummary, SynthError> {
    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|source| SynthError::Io {
        path: frames_dir.clone(),
        source,
    })?;

    let coarse = capsule_rig(capsule_mesh(config.coarse_cols, config.coarse_rows));
    let gt = ground_truth(config);
    formats::save_template(&out.join("template.json"), &coarse)?;
    formats::save_colored_mesh(&out.join("gt_mesh.json"), &gt.rig, &gt.colors)?;

    let cameras = turntable_cameras(config.views, config.resolution);
    let poses = pose_sweep(config.views, config.bend_amplitude);
    formats::save_cameras(&out.join("cameras.json"), &cameras)?;
    formats::save_poses(&out.join("poses.json"), &poses)?;

    let cfg = RasterConfig64::default();
    let mut entries = Vec::with_capacity(config.views);
    for (k, (camera, pose)) in cameras.iter().zip(&poses).enumerate() {
        let bones = bone_transforms(&gt.rig.skeleton, pose)?;
        let posed = skin_vertices(gt.rig.mesh.vertices(), &gt.rig.weights, &bones)?;
        let image = render_gt(&gt.rig.mesh, &posed, &gt.colors, camera, &cfg);
        let mask: Vec<bool> = image.alpha.iter().map(|&a| a >= 0.5).collect();
        let entry = FrameEntry {
            color: format!("frames/color_{k:03}.png"),
            normal: Some(format!("frames/normal_{k:03}.png")),
            mask: Some(format!("frames/mask_{k:03}.png")),
        };
        let (w, h) = (camera.width, camera.height);
        pngio::save_color_png(&out.join(&entry.color), &image.color, w, h)?;
        pngio::save_normal_png(
            &out.join(entry.normal.as_ref().unwrap()),
            &image.normal,
            w,
            h,
        )?;
        pngio::save_mask_png(&out.join(entry.mask.as_ref().unwrap()), &mask, w, h)?;
        entries.push(entry);
    }

    let baseline_v2v_mm = metrics::v2v_mm(
        &coarse.mesh,
        &gt.rig.mesh,
        metrics::V2V_SAMPLES,
        config.seed,
    )?;

    let holdout = if config.views > 1 {
        vec![config.views - 1]
    } else {
        Vec::new()
    };
    let manifest = ManifestFile {
        schema: MANIFEST_SCHEMA.to_string(),
        version: 1,
        units_scale: 1.0,
        template: "template.json".into(),
        cameras: "cameras.json".into(),
        poses: "poses.json".into(),
        frames: entries,
        holdout,
        baseline_v2v_mm: Some(baseline_v2v_mm),
        gt_mesh: Some("gt_mesh.json".into()),
    };
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|source| SynthError::Io {
        path: manifest_path.clone(),
        source,
    })?;

    Ok(SynthSummary {
        manifest: manifest_path,
        baseline_v2v_mm,
        frames: config.views,
        coarse_faces: coarse.mesh.face_count(),
        fine_faces: gt.rig.mesh.face_count(),
    })
}
