//! JSON schemas for rigs, cameras, poses and dataset manifests, plus a
//! geometry-only OBJ importer.
//!
//! Everything is `f64` on disk. Paths inside a manifest are relative to the
//! manifest file; loading resolves them and checks the files exist before
//! any compute starts.

use avatar_core::skinning::{PoseFrame, RigidTransform, Skeleton, SkinWeights};
use avatar_core::{Camera64, PoseFrame64, Skeleton64, SkinWeights64, TemplateMesh64};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TEMPLATE_SCHEMA: &str = "avatar-template";
pub const COLORED_MESH_SCHEMA: &str = "avatar-colored-mesh";
pub const MANIFEST_SCHEMA: &str = "avatar-dataset";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: field '{field}': {reason}")]
    Schema {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("{path}: OBJ line {line}: {reason}")]
    Obj {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: referenced file missing: {missing}")]
    MissingFile { path: PathBuf, missing: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema_err(path: &Path, field: &str, reason: impl Into<String>) -> FormatError {
    FormatError::Schema {
        path: path.to_path_buf(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// A mesh plus its rig, the in-memory form of a template file.
#[derive(Debug, Clone)]
pub struct Rig {
    pub mesh: TemplateMesh64,
    pub skeleton: Skeleton64,
    pub weights: SkinWeights64,
}

/// On-disk template document. Weight rows are sparse `[joint, weight]`
/// pairs; parents use `null` for roots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateFile {
    pub schema: String,
    pub version: u32,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub joints: Vec<[f64; 3]>,
    pub parents: Vec<Option<usize>>,
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl TemplateFile {
    pub fn from_rig(rig: &Rig) -> Self {
        Self {
            schema: TEMPLATE_SCHEMA.to_string(),
            version: 1,
            vertices: rig
                .mesh
                .vertices()
                .iter()
                .map(|v| [v.x, v.y, v.z])
                .collect(),
            faces: rig.mesh.faces().to_vec(),
            joints: rig
                .skeleton
                .rest_joints()
                .iter()
                .map(|j| [j.x, j.y, j.z])
                .collect(),
            parents: rig.skeleton.parents().to_vec(),
            weights: rig.weights.rows().to_vec(),
        }
    }

    pub fn into_rig(self, path: &Path) -> Result<Rig, FormatError> {
        if self.schema != TEMPLATE_SCHEMA && self.schema != COLORED_MESH_SCHEMA {
            return Err(schema_err(
                path,
                "schema",
                format!("expected '{TEMPLATE_SCHEMA}', got '{}'", self.schema),
            ));
        }
        if self.parents.len() != self.joints.len() {
            return Err(schema_err(
                path,
                "parents",
                format!(
                    "{} parents for {} joints",
                    self.parents.len(),
                    self.joints.len()
                ),
            ));
        }
        if self.weights.len() != self.vertices.len() {
            return Err(schema_err(
                path,
                "weights",
                format!(
                    "{} weight rows for {} vertices",
                    self.weights.len(),
                    self.vertices.len()
                ),
            ));
        }
        let vertices: Vec<Vector3<f64>> = self.vertices.iter().map(|v| Vector3::from(*v)).collect();
        let mesh = TemplateMesh64::new(vertices, self.faces)
            .map_err(|e| schema_err(path, "faces", e.to_string()))?;
        let joints: Vec<Vector3<f64>> = self.joints.iter().map(|j| Vector3::from(*j)).collect();
        let skeleton = Skeleton::new(joints, self.parents)
            .map_err(|e| schema_err(path, "parents", e.to_string()))?;
        let weights = SkinWeights::new(self.weights, skeleton.joint_count())
            .map_err(|e| schema_err(path, "weights", e.to_string()))?;
        Ok(Rig {
            mesh,
            skeleton,
            weights,
        })
    }
}

pub fn load_template(path: &Path) -> Result<Rig, FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let file: TemplateFile = serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.into_rig(path)
}

pub fn save_template(path: &Path, rig: &Rig) -> Result<(), FormatError> {
    let file = TemplateFile::from_rig(rig);
    let text = serde_json::to_string_pretty(&file).expect("template serializes");
    std::fs::write(path, text).map_err(io_err(path))
}

/// Template schema plus per-face colors; the export format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColoredMeshFile {
    #[serde(flatten)]
    pub template: TemplateFile,
    pub face_colors: Vec<[f64; 3]>,
}

pub fn load_colored_mesh(path: &Path) -> Result<(Rig, Vec<Vector3<f64>>), FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let file: ColoredMeshFile =
        serde_json::from_str(&text).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    if file.face_colors.len() != file.template.faces.len() {
        return Err(schema_err(
            path,
            "face_colors",
            format!(
                "{} colors for {} faces",
                file.face_colors.len(),
                file.template.faces.len()
            ),
        ));
    }
    let colors = file.face_colors.iter().map(|c| Vector3::from(*c)).collect();
    Ok((file.template.into_rig(path)?, colors))
}

pub fn save_colored_mesh(
    path: &Path,
    rig: &Rig,
    face_colors: &[Vector3<f64>],
) -> Result<(), FormatError> {
    let mut template = TemplateFile::from_rig(rig);
    template.schema = COLORED_MESH_SCHEMA.to_string();
    let file = ColoredMeshFile {
        template,
        face_colors: face_colors.iter().map(|c| [c.x, c.y, c.z]).collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("colored mesh serializes");
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraFile {
    pub fn from_camera(c: &Camera64) -> Self {
        let r = &c.world_to_camera.rotation;
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [
                c.world_to_camera.translation.x,
                c.world_to_camera.translation.y,
                c.world_to_camera.translation.z,
            ],
        }
    }

    pub fn into_camera(self, path: &Path, index: usize) -> Result<Camera64, FormatError> {
        let r = self.rotation;
        let camera = Camera64 {
            world_to_camera: RigidTransform {
                rotation: Matrix3::new(
                    r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
                ),
                translation: Vector3::from(self.translation),
            },
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        camera
            .validate()
            .map_err(|e| schema_err(path, &format!("cameras[{index}]"), e.to_string()))?;
        Ok(camera)
    }
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera64>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let files: Vec<CameraFile> =
        serde_json::from_str(&text).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    files
        .into_iter()
        .enumerate()
        .map(|(i, f)| f.into_camera(path, i))
        .collect()
}

pub fn save_cameras(path: &Path, cameras: &[Camera64]) -> Result<(), FormatError> {
    let files: Vec<CameraFile> = cameras.iter().map(CameraFile::from_camera).collect();
    let text = serde_json::to_string_pretty(&files).expect("cameras serialize");
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    pub joint_rotations: Vec<[f64; 3]>,
    pub translation: [f64; 3],
}

impl PoseFile {
    pub fn from_pose(p: &PoseFrame64) -> Self {
        Self {
            joint_rotations: p.joint_rotations.iter().map(|r| [r.x, r.y, r.z]).collect(),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }

    pub fn into_pose(self) -> PoseFrame64 {
        PoseFrame {
            joint_rotations: self
                .joint_rotations
                .iter()
                .map(|r| Vector3::from(*r))
                .collect(),
            translation: Vector3::from(self.translation),
        }
    }
}

pub fn load_poses(path: &Path) -> Result<Vec<PoseFrame64>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let files: Vec<PoseFile> = serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(files.into_iter().map(PoseFile::into_pose).collect())
}

pub fn save_poses(path: &Path, poses: &[PoseFrame64]) -> Result<(), FormatError> {
    let files: Vec<PoseFile> = poses.iter().map(PoseFile::from_pose).collect();
    let text = serde_json::to_string_pretty(&files).expect("poses serialize");
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub color: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

/// On-disk manifest: relative paths and dataset-level metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub schema: String,
    pub version: u32,
    pub units_scale: f64,
    pub template: String,
    pub cameras: String,
    pub poses: String,
    pub frames: Vec<FrameEntry>,
    /// Frame indices excluded from training and used for held-out eval.
    #[serde(default)]
    pub holdout: Vec<usize>,
    /// v2v (mm) between the coarse template and the ground-truth mesh,
    /// recorded at generation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_v2v_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mesh: Option<String>,
}

/// A loaded, validated manifest with every path resolved.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub dir: PathBuf,
    pub units_scale: f64,
    pub template: PathBuf,
    pub cameras: Vec<Camera64>,
    pub poses: Vec<PoseFrame64>,
    pub frames: Vec<ResolvedFrame>,
    pub holdout: Vec<usize>,
    pub baseline_v2v_mm: Option<f64>,
    pub gt_mesh: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ResolvedFrame {
    pub color: PathBuf,
    pub normal: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

fn require_exists(manifest: &Path, p: PathBuf) -> Result<PathBuf, FormatError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(FormatError::MissingFile {
            path: manifest.to_path_buf(),
            missing: p,
        })
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if file.schema != MANIFEST_SCHEMA {
        return Err(schema_err(
            path,
            "schema",
            format!("expected '{MANIFEST_SCHEMA}', got '{}'", file.schema),
        ));
    }
    if !(file.units_scale.is_finite() && file.units_scale > 0.0) {
        return Err(schema_err(path, "units_scale", "must be positive"));
    }
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let template = require_exists(path, dir.join(&file.template))?;
    let cameras = load_cameras(&require_exists(path, dir.join(&file.cameras))?)?;
    let poses = load_poses(&require_exists(path, dir.join(&file.poses))?)?;
    if cameras.len() != file.frames.len() || poses.len() != file.frames.len() {
        return Err(schema_err(
            path,
            "frames",
            format!(
                "{} frames, {} cameras, {} poses",
                file.frames.len(),
                cameras.len(),
                poses.len()
            ),
        ));
    }
    for (i, h) in file.holdout.iter().enumerate() {
        if *h >= file.frames.len() {
            return Err(schema_err(
                path,
                &format!("holdout[{i}]"),
                format!("index {h} out of range for {} frames", file.frames.len()),
            ));
        }
    }
    let mut frames = Vec::with_capacity(file.frames.len());
    for entry in &file.frames {
        frames.push(ResolvedFrame {
            color: require_exists(path, dir.join(&entry.color))?,
            normal: entry
                .normal
                .as_ref()
                .map(|n| require_exists(path, dir.join(n)))
                .transpose()?,
            mask: entry
                .mask
                .as_ref()
                .map(|m| require_exists(path, dir.join(m)))
                .transpose()?,
        });
    }
    let gt_mesh = file
        .gt_mesh
        .as_ref()
        .map(|g| require_exists(path, dir.join(g)))
        .transpose()?;
    Ok(Manifest {
        dir,
        units_scale: file.units_scale,
        template,
        cameras,
        poses,
        frames,
        holdout: file.holdout,
        baseline_v2v_mm: file.baseline_v2v_mm,
        gt_mesh,
    })
}

/// Geometry-only OBJ import: `v` and `f` records, 1-based indices,
/// `v/vt/vn` face syntax accepted, other records ignored.
pub fn load_obj(path: &Path) -> Result<TemplateMesh64, FormatError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = ln + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    *c = toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| {
                        FormatError::Obj {
                            path: path.to_path_buf(),
                            line: lineno,
                            reason: "vertex needs three numbers".into(),
                        }
                    })?;
                }
                vertices.push(Vector3::from(coords));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        first.parse::<usize>().ok().and_then(|i| i.checked_sub(1))
                    })
                    .collect::<Option<Vec<usize>>>()
                    .ok_or_else(|| FormatError::Obj {
                        path: path.to_path_buf(),
                        line: lineno,
                        reason: "face indices must be positive integers".into(),
                    })?;
                if idx.len() < 3 {
                    return Err(FormatError::Obj {
                        path: path.to_path_buf(),
                        line: lineno,
                        reason: "face needs at least three vertices".into(),
                    });
                }
                // Fan-triangulate polygons.
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TemplateMesh64::new(vertices, faces).map_err(|e| FormatError::Obj {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use avatar_core::skinning::Skeleton;

    fn sample_rig() -> Rig {
        let mesh = TemplateMesh64::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 3, 1], [1, 3, 2], [0, 2, 3]],
        )
        .unwrap();
        let skeleton = Skeleton::new(
            vec![Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)],
            vec![None, Some(0)],
        )
        .unwrap();
        let weights = SkinWeights::new(
            vec![
                vec![(0, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(1, 1.0)],
                vec![(0, 0.25), (1, 0.75)],
            ],
            2,
        )
        .unwrap();
        Rig {
            mesh,
            skeleton,
            weights,
        }
    }

    #[test]
    fn template_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("template.json");
        let rig = sample_rig();
        save_template(&path, &rig).unwrap();
        let loaded = load_template(&path).unwrap();
        for (a, b) in rig.mesh.vertices().iter().zip(loaded.mesh.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(rig.mesh.faces(), loaded.mesh.faces());
        assert_eq!(rig.skeleton.parents(), loaded.skeleton.parents());
        for (a, b) in rig
            .skeleton
            .rest_joints()
            .iter()
            .zip(loaded.skeleton.rest_joints())
        {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(rig.weights.rows(), loaded.weights.rows());
        // Re-save: byte-identical (shortest-round-trip floats are stable).
        let text1 = std::fs::read(&path).unwrap();
        save_template(&path, &loaded).unwrap();
        assert_eq!(text1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn bad_weight_sum_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("template.json");
        let rig = sample_rig();
        let mut file = TemplateFile::from_rig(&rig);
        file.weights[1] = vec![(0, 0.4), (1, 0.5)]; // sums to 0.9
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let err = load_template(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("weights"), "unexpected error: {msg}");
        assert!(msg.contains('1'), "should name the vertex: {msg}");
    }

    #[test]
    fn camera_and_pose_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cams = vec![Camera64 {
            world_to_camera: RigidTransform {
                rotation: nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner(),
                translation: Vector3::new(0.1, -0.5, 2.0),
            },
            fx: 70.0,
            fy: 70.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        }];
        let cpath = dir.path().join("cameras.json");
        save_cameras(&cpath, &cams).unwrap();
        let loaded = load_cameras(&cpath).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(
            (loaded[0].world_to_camera.rotation - cams[0].world_to_camera.rotation).norm() < 1e-12
        );

        let poses = vec![PoseFrame {
            joint_rotations: vec![Vector3::new(0.1, 0.2, 0.3), Vector3::zeros()],
            translation: Vector3::new(0.0, 0.1, 0.0),
        }];
        let ppath = dir.path().join("poses.json");
        save_poses(&ppath, &poses).unwrap();
        assert_eq!(load_poses(&ppath).unwrap(), poses);
    }

    #[test]
    fn non_rigid_camera_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        let mut file = CameraFile::from_camera(&Camera64 {
            world_to_camera: RigidTransform::identity(),
            fx: 70.0,
            fy: 70.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        });
        file.rotation[0][0] = 2.0;
        std::fs::write(&path, serde_json::to_string(&vec![file]).unwrap()).unwrap();
        assert!(load_cameras(&path).is_err());
    }

    #[test]
    fn manifest_validates_counts_and_existence() {
        let dir = tempfile::tempdir().unwrap();
        let rig = sample_rig();
        save_template(&dir.path().join("template.json"), &rig).unwrap();
        let cam = Camera64 {
            world_to_camera: RigidTransform::identity(),
            fx: 70.0,
            fy: 70.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        };
        save_cameras(&dir.path().join("cameras.json"), &[cam]).unwrap();
        save_poses(&dir.path().join("poses.json"), &[PoseFrame::rest(2)]).unwrap();
        std::fs::write(dir.path().join("color_000.png"), b"stub").unwrap();
        let manifest = ManifestFile {
            schema: MANIFEST_SCHEMA.to_string(),
            version: 1,
            units_scale: 1.0,
            template: "template.json".into(),
            cameras: "cameras.json".into(),
            poses: "poses.json".into(),
            frames: vec![FrameEntry {
                color: "color_000.png".into(),
                normal: None,
                mask: None,
            }],
            holdout: vec![],
            baseline_v2v_mm: Some(12.5),
            gt_mesh: None,
        };
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        let loaded = load_manifest(&mpath).unwrap();
        assert_eq!(loaded.frames.len(), 1);
        assert_eq!(loaded.baseline_v2v_mm, Some(12.5));

        // A missing frame file fails before any compute.
        let mut broken = manifest.clone();
        broken.frames[0].color = "missing.png".into();
        std::fs::write(&mpath, serde_json::to_string(&broken).unwrap()).unwrap();
        assert!(matches!(
            load_manifest(&mpath),
            Err(FormatError::MissingFile { .. })
        ));

        // Count mismatch between streams is a schema error.
        let mut broken = manifest.clone();
        broken.frames.push(broken.frames[0].clone());
        std::fs::write(&mpath, serde_json::to_string(&broken).unwrap()).unwrap();
        assert!(matches!(
            load_manifest(&mpath),
            Err(FormatError::Schema { .. })
        ));
    }

    #[test]
    fn obj_import_triangulates_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        std::fs::write(
            &path,
            "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n",
        )
        .unwrap();
        let mesh = load_obj(&path).unwrap();
        assert_eq!(mesh.vertex_count(), 4);
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);

        std::fs::write(&path, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(load_obj(&path).is_err());
    }
}
