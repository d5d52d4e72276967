//! The bound splat avatar: a template mesh with one Gaussian per face, a
//! rig, and the two hash-grid fields (vertex displacement and per-face
//! color). Ties the geometry, skinning, field and splatting modules into one
//! differentiable forward/backward pair per frame.
//!
//! Per-face splat state: scales (s1 = surface epsilon fixed, s2/s3 stored as
//! logs so any optimizer step keeps them positive), a frozen in-plane
//! rotation, opacity fixed at 1 (never stored). The splat center is the
//! posed face centroid; its rotation is the posed face frame lifted by the
//! in-plane rotation; its normal payload is the posed face normal.

use crate::fields::{Activation, FieldForward, FieldGradients, HashField, HashGridConfig};
use crate::geometry::{self, TemplateMesh, SURFACE_EPSILON};
use crate::scalar::Real;
use crate::skinning::{
    bone_transforms, bone_transforms_backward, skin_vertices, skin_vertices_backward, PoseFrame,
    RigidTransform, Skeleton, SkinWeights,
};
use crate::splatting::{
    composite, project_backward, project_splat, rasterize_backward, sort_splats, Camera,
    ImagePlane, RasterConfig, SplatScreen,
};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Skinning(#[from] crate::skinning::SkinningError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Splat(#[from] crate::splatting::SplatError),
    #[error("skin weights cover {weights} vertices, mesh has {mesh}")]
    WeightCountMismatch { weights: usize, mesh: usize },
}

/// Everything the backward pass needs from one frame's forward pass.
#[derive(Debug, Clone)]
pub struct FrameCache<T: Real> {
    disp_forward: FieldForward<T>,
    color_forward: FieldForward<T>,
    bones: Vec<RigidTransform<T>>,
    displaced: Vec<Vector3<T>>,
    binds: Vec<Option<FaceBind<T>>>,
    splats: Vec<SplatScreen<T>>,
}

#[derive(Debug, Clone)]
struct FaceBind<T: Real> {
    rotation: Matrix3<T>,
    scales: Vector3<T>,
    sigma: Matrix3<T>,
    centroid: Vector3<T>,
}

/// One rendered frame plus its cache.
#[derive(Debug, Clone)]
pub struct FrameForward<T: Real> {
    pub image: ImagePlane<T>,
    pub posed_vertices: Vec<Vector3<T>>,
    pub cache: FrameCache<T>,
}

/// Gradients for every trainable group of the model plus the per-frame pose.
#[derive(Debug, Clone)]
pub struct ParamGradients<T: Real> {
    pub log_scales: Vec<Vector2<T>>,
    pub displacement: FieldGradients<T>,
    pub color: FieldGradients<T>,
    pub rest_joints: Vec<Vector3<T>>,
    pub pose_rotations: Vec<Vector3<T>>,
    pub pose_translation: Vector3<T>,
}

#[derive(Debug, Clone)]
pub struct BoundSplatModel<T: Real> {
    mesh: TemplateMesh<T>,
    skeleton: Skeleton<T>,
    skin_weights: SkinWeights<T>,
    /// `[ln s2, ln s3]` per face; the in-plane splat extents.
    pub log_scales: Vec<Vector2<T>>,
    /// Frozen in-plane rotation per face as an unnormalized complex number.
    pub rot2d: Vec<Vector2<T>>,
    pub displacement: HashField<T>,
    pub color: HashField<T>,
    /// Fixed out-of-plane splat scale s1.
    pub surface_epsilon: T,
    canonical_centroids: Vec<Vector3<T>>,
    adjacency: Vec<(usize, usize)>,
}

/// AABB padded by 10% per axis (at least 1 cm) so boundary vertices never
/// sit exactly on the grid edge.
fn padded_aabb<T: Real>(mesh: &TemplateMesh<T>) -> (Vector3<T>, Vector3<T>) {
    let (mut lo, mut hi) = mesh.aabb();
    for k in 0..3 {
        let pad = ((hi[k] - lo[k]) * T::of(0.1)).max(T::of(0.01));
        lo[k] -= pad;
        hi[k] += pad;
    }
    (lo, hi)
}

impl<T: Real> BoundSplatModel<T> {
    /// Builds a fresh model. `grid` supplies the hash-grid shape; its AABB is
    /// replaced by the padded mesh AABB. Splat scales start at half the
    /// square root of each face's area; both fields initialize to their
    /// neutral outputs (zero displacement, 0.5 gray).
    pub fn new(
        mesh: TemplateMesh<T>,
        skeleton: Skeleton<T>,
        skin_weights: SkinWeights<T>,
        grid: HashGridConfig<T>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if skin_weights.vertex_count() != mesh.vertex_count() {
            return Err(ModelError::WeightCountMismatch {
                weights: skin_weights.vertex_count(),
                mesh: mesh.vertex_count(),
            });
        }
        let (lo, hi) = padded_aabb(&mesh);
        let grid = HashGridConfig {
            aabb_min: lo,
            aabb_max: hi,
            ..grid
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let displacement = HashField::new(grid.clone(), Activation::Linear, &mut rng)?;
        let color = HashField::new(grid, Activation::Sigmoid, &mut rng)?;
        let log_scales = (0..mesh.face_count())
            .map(|f| {
                let s = mesh.face_area(mesh.vertices(), f).sqrt().max(T::of(1e-4)) * T::of(0.5);
                Vector2::repeat(s.ln())
            })
            .collect();
        let rot2d = vec![Vector2::new(T::one(), T::zero()); mesh.face_count()];
        let canonical_centroids = (0..mesh.face_count())
            .map(|f| mesh.face_centroid(mesh.vertices(), f))
            .collect();
        let adjacency = mesh.edge_adjacent_faces();
        Ok(Self {
            mesh,
            skeleton,
            skin_weights,
            log_scales,
            rot2d,
            displacement,
            color,
            surface_epsilon: T::of(SURFACE_EPSILON),
            canonical_centroids,
            adjacency,
        })
    }

    pub fn mesh(&self) -> &TemplateMesh<T> {
        &self.mesh
    }

    pub fn skeleton(&self) -> &Skeleton<T> {
        &self.skeleton
    }

    /// Mutable skeleton access for joint optimization; topology is fixed,
    /// only rest positions move.
    pub fn skeleton_mut(&mut self) -> &mut Skeleton<T> {
        &mut self.skeleton
    }

    pub fn skin_weights(&self) -> &SkinWeights<T> {
        &self.skin_weights
    }

    pub fn adjacency(&self) -> &[(usize, usize)] {
        &self.adjacency
    }

    pub fn canonical_centroids(&self) -> &[Vector3<T>] {
        &self.canonical_centroids
    }

    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }

    /// Canonical displaced vertices `v + delta(v)` and the field cache.
    fn displaced_vertices(&self) -> (Vec<Vector3<T>>, FieldForward<T>) {
        let fwd = self.displacement.forward_batch(self.mesh.vertices());
        let displaced = self
            .mesh
            .vertices()
            .iter()
            .zip(&fwd.outputs)
            .map(|(v, d)| v + d)
            .collect();
        (displaced, fwd)
    }

    /// The canonical-space mesh the model currently represents (identity
    /// pose, displacement applied). Used by export and evaluation.
    pub fn canonical_mesh(&self) -> Result<TemplateMesh<T>, ModelError> {
        let (displaced, _) = self.displaced_vertices();
        Ok(TemplateMesh::new(displaced, self.mesh.faces().to_vec())?)
    }

    /// Per-face colors as the color field currently evaluates them.
    pub fn face_colors(&self) -> Vec<Vector3<T>> {
        self.color.forward_batch(&self.canonical_centroids).outputs
    }

    /// Renders one frame: color, normal and alpha planes plus the cache for
    /// [`Self::backward_frame`]. Faces that pose to degenerate triangles or
    /// fall behind the near plane simply carry no splat.
    pub fn forward_frame(
        &self,
        camera: &Camera<T>,
        pose: &PoseFrame<T>,
        raster: &RasterConfig<T>,
    ) -> Result<FrameForward<T>, ModelError> {
        let (displaced, disp_forward) = self.displaced_vertices();
        let color_forward = self.color.forward_batch(&self.canonical_centroids);
        let bones = bone_transforms(&self.skeleton, pose)?;
        let posed = skin_vertices(&displaced, &self.skin_weights, &bones)?;

        let mut binds: Vec<Option<FaceBind<T>>> = vec![None; self.mesh.face_count()];
        let mut splats = Vec::with_capacity(self.mesh.face_count());
        for (f, face) in self.mesh.faces().iter().enumerate() {
            let (v0, v1, v2) = (posed[face[0]], posed[face[1]], posed[face[2]]);
            let Some(frame) = geometry::build_face_frame(v0, v1, v2) else {
                continue;
            };
            let rotation = geometry::lift_rotation(&frame, self.rot2d[f])?;
            let scales = Vector3::new(
                self.surface_epsilon,
                self.log_scales[f].x.exp(),
                self.log_scales[f].y.exp(),
            );
            let sigma = geometry::build_covariance(&rotation, scales)?;
            let centroid = geometry::face_centroid(v0, v1, v2);
            let Some(mut splat) = project_splat(&centroid, &sigma, camera, raster) else {
                continue;
            };
            splat.color = color_forward.outputs[f];
            splat.normal = frame.r0;
            splat.opacity = T::one();
            splat.splat_id = f;
            splats.push(splat);
            binds[f] = Some(FaceBind {
                rotation,
                scales,
                sigma,
                centroid,
            });
        }
        sort_splats(&mut splats);
        let image = composite(&splats, raster, camera.width, camera.height);
        Ok(FrameForward {
            image,
            posed_vertices: posed,
            cache: FrameCache {
                disp_forward,
                color_forward,
                bones,
                displaced,
                binds,
                splats,
            },
        })
    }

    /// Full backward pass for one frame. `g_color` / `g_normal` are the loss
    /// gradients w.r.t. the rendered planes; `g_posed_extra` carries
    /// direct vertex gradients (the normal-consistency term), may be empty.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_frame(
        &self,
        camera: &Camera<T>,
        pose: &PoseFrame<T>,
        fwd: &FrameForward<T>,
        raster: &RasterConfig<T>,
        g_color: &[Vector3<T>],
        g_normal: &[Vector3<T>],
        g_posed_extra: &[Vector3<T>],
    ) -> Result<ParamGradients<T>, ModelError> {
        let cache = &fwd.cache;
        let n_faces = self.mesh.face_count();
        let (splat_grads, _g_bg, _g_nbg) = rasterize_backward(
            &cache.splats,
            raster,
            n_faces,
            g_color,
            Some(g_normal),
            camera.width,
            camera.height,
        )?;

        let mut g_posed = vec![Vector3::zeros(); fwd.posed_vertices.len()];
        for (g, extra) in g_posed.iter_mut().zip(g_posed_extra) {
            *g += extra;
        }
        let mut g_colors_out = vec![Vector3::zeros(); n_faces];
        let mut g_log_scales = vec![Vector2::zeros(); n_faces];

        for (f, bind) in cache.binds.iter().enumerate() {
            let Some(bind) = bind else { continue };
            let sg = &splat_grads[f];
            g_colors_out[f] = sg.color;

            let (g_centroid, g_sigma) =
                project_backward(&bind.centroid, &bind.sigma, camera, &sg.mean2d, &sg.cov2d);
            let (g_rot, g_scales) =
                geometry::covariance_backward(&bind.rotation, bind.scales, &g_sigma);
            // d/d ln s = s d/d s; s1 is fixed and gets no gradient.
            g_log_scales[f] = Vector2::new(g_scales.y * bind.scales.y, g_scales.z * bind.scales.z);

            let (mut g_r0, g_r1, g_r2) = geometry::lift_rotation_backward(self.rot2d[f], &g_rot);
            g_r0 += sg.normal; // the normal payload is the frame's first column

            let [i0, i1, i2] = self.mesh.faces()[f];
            let (v0, v1, v2) = (
                fwd.posed_vertices[i0],
                fwd.posed_vertices[i1],
                fwd.posed_vertices[i2],
            );
            if let Some([ga, gb, gc]) = geometry::face_frame_backward(v0, v1, v2, g_r0, g_r1, g_r2)
            {
                g_posed[i0] += ga;
                g_posed[i1] += gb;
                g_posed[i2] += gc;
            }
            let third = g_centroid / T::of(3.0);
            g_posed[i0] += third;
            g_posed[i1] += third;
            g_posed[i2] += third;
        }

        let (g_displaced, g_bones) =
            skin_vertices_backward(&cache.displaced, &self.skin_weights, &cache.bones, &g_posed);
        let fk = bone_transforms_backward(&self.skeleton, pose, &g_bones)?;
        // v' = v + delta, so the displacement-output gradient is g_displaced.
        let g_disp_field = self
            .displacement
            .backward_batch(&cache.disp_forward, &g_displaced)?;
        let g_color_field = self
            .color
            .backward_batch(&cache.color_forward, &g_colors_out)?;

        Ok(ParamGradients {
            log_scales: g_log_scales,
            displacement: g_disp_field,
            color: g_color_field,
            rest_joints: fk.rest_joints,
            pose_rotations: fk.joint_rotations,
            pose_translation: fk.translation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_grid() -> HashGridConfig<f64> {
        HashGridConfig {
            levels: 6,
            table_size: 1 << 10,
            features: 2,
            ..Default::default()
        }
    }

    // A 3x3-vertex plane in y=0 skinned to a 2-bone chain along x, bent at
    // the second joint.
    fn plane_rig() -> (TemplateMesh<f64>, Skeleton<f64>, SkinWeights<f64>) {
        let mut verts = Vec::new();
        for z in 0..3 {
            for x in 0..3 {
                verts.push(Vector3::new(x as f64 * 0.25, 0.0, z as f64 * 0.25));
            }
        }
        let mut faces = Vec::new();
        for z in 0..2 {
            for x in 0..2 {
                let i = z * 3 + x;
                faces.push([i, i + 1, i + 3]);
                faces.push([i + 1, i + 4, i + 3]);
            }
        }
        let mesh = TemplateMesh::new(verts.clone(), faces).unwrap();
        let skeleton = Skeleton::new(
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.25, 0.0, 0.0)],
            vec![None, Some(0)],
        )
        .unwrap();
        let dense: Vec<Vec<f64>> = verts
            .iter()
            .map(|v| {
                let t = (v.x / 0.5).clamp(0.0, 1.0);
                vec![1.0 - t, t]
            })
            .collect();
        let weights = SkinWeights::from_dense(&dense, 2).unwrap();
        (mesh, skeleton, weights)
    }

    fn bent_pose() -> PoseFrame<f64> {
        PoseFrame {
            joint_rotations: vec![
                Vector3::new(0.05, -0.1, 0.08),
                Vector3::new(0.3, 0.2, -0.25),
            ],
            translation: Vector3::new(0.01, -0.02, 0.015),
        }
    }

    fn test_camera() -> Camera<f64> {
        Camera {
            world_to_camera: RigidTransform {
                rotation: nalgebra::Rotation3::from_euler_angles(3.0, 0.15, 0.1).into_inner(),
                translation: Vector3::new(-0.2, 0.1, 1.2),
            },
            fx: 14.0,
            fy: 14.0,
            cx: 4.0,
            cy: 4.0,
            width: 8,
            height: 8,
        }
    }

    #[test]
    fn fresh_model_is_neutral() {
        let (mesh, skeleton, weights) = plane_rig();
        let model = BoundSplatModel::new(mesh, skeleton, weights, small_grid(), 7).unwrap();
        let fwd = model
            .forward_frame(
                &test_camera(),
                &PoseFrame::rest(2),
                &RasterConfig::default(),
            )
            .unwrap();
        // Zero displacement: canonical mesh equals template.
        for (a, b) in fwd.cache.displaced.iter().zip(model.mesh().vertices()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        // Sigmoid head starts at exactly 0.5 gray.
        for c in model.face_colors() {
            assert_relative_eq!(c, Vector3::repeat(0.5), epsilon = 1e-15);
        }
        // Rest pose: posed equals canonical.
        for (a, b) in fwd.posed_vertices.iter().zip(model.mesh().vertices()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_and_seeded() {
        let (mesh, skeleton, weights) = plane_rig();
        let m1 = BoundSplatModel::new(
            mesh.clone(),
            skeleton.clone(),
            weights.clone(),
            small_grid(),
            42,
        )
        .unwrap();
        let m2 = BoundSplatModel::new(mesh, skeleton, weights, small_grid(), 42).unwrap();
        let cam = test_camera();
        let cfg = RasterConfig::default();
        let pose = bent_pose();
        let a = m1.forward_frame(&cam, &pose, &cfg).unwrap();
        let b = m2.forward_frame(&cam, &pose, &cfg).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.posed_vertices, b.posed_vertices);
    }

    #[test]
    fn camera_behind_scene_renders_background_and_zero_grads() {
        let (mesh, skeleton, weights) = plane_rig();
        let model = BoundSplatModel::new(mesh, skeleton, weights, small_grid(), 7).unwrap();
        let mut cam = test_camera();
        // Point the camera away: everything culled at the near plane.
        cam.world_to_camera.translation = Vector3::new(0.0, 0.0, -50.0);
        let cfg = RasterConfig::default();
        let pose = PoseFrame::rest(2);
        let fwd = model.forward_frame(&cam, &pose, &cfg).unwrap();
        assert!(fwd.cache.splats.is_empty());
        let g = vec![Vector3::repeat(1.0); 64];
        let zeros = vec![Vector3::zeros(); 9];
        let grads = model
            .backward_frame(&cam, &pose, &fwd, &cfg, &g, &g, &zeros)
            .unwrap();
        assert!(grads.log_scales.iter().all(|g| *g == Vector2::zeros()));
        assert_eq!(grads.pose_translation, Vector3::zeros());
        assert_eq!(grads.displacement.norm_sq(), 0.0);
    }

    #[test]
    fn zero_upstream_gradients_are_zero() {
        let (mesh, skeleton, weights) = plane_rig();
        let model = BoundSplatModel::new(mesh, skeleton, weights, small_grid(), 7).unwrap();
        let cam = test_camera();
        let cfg = RasterConfig::default();
        let pose = bent_pose();
        let fwd = model.forward_frame(&cam, &pose, &cfg).unwrap();
        assert!(!fwd.cache.splats.is_empty());
        let zeros_img = vec![Vector3::zeros(); 64];
        let zeros_v = vec![Vector3::zeros(); 9];
        let grads = model
            .backward_frame(&cam, &pose, &fwd, &cfg, &zeros_img, &zeros_img, &zeros_v)
            .unwrap();
        assert!(grads.log_scales.iter().all(|g| *g == Vector2::zeros()));
        assert!(grads.rest_joints.iter().all(|g| *g == Vector3::zeros()));
        assert_eq!(grads.color.norm_sq(), 0.0);
    }

    // The do-everything gradient check: probe loss sum(gc . color + gn .
    // normal) over the image, FD through the whole forward pass.
    #[test]
    fn backward_matches_fd_through_full_pipeline() {
        let (mesh, skeleton, weights) = plane_rig();
        let model = BoundSplatModel::new(mesh, skeleton, weights, small_grid(), 11).unwrap();
        let cam = test_camera();
        let cfg = RasterConfig::default();
        let pose = bent_pose();

        let fwd = model.forward_frame(&cam, &pose, &cfg).unwrap();
        assert!(
            fwd.cache.splats.len() >= 6,
            "scene only projected {} splats",
            fwd.cache.splats.len()
        );
        // Conditioning: FD steps must not cross the cap, the stop, a radius
        // edge or a depth tie (same bands as the splatting FD suite).
        for (i, a) in fwd.cache.splats.iter().enumerate() {
            for b in fwd.cache.splats.iter().skip(i + 1) {
                assert!((a.depth - b.depth).abs() > 1e-4, "depth tie");
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let gc: Vec<Vector3<f64>> = (0..64)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let gn: Vec<Vector3<f64>> = (0..64)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let zeros_v = vec![Vector3::zeros(); 9];
        let grads = model
            .backward_frame(&cam, &pose, &fwd, &cfg, &gc, &gn, &zeros_v)
            .unwrap();

        let probe = |m: &BoundSplatModel<f64>, pose: &PoseFrame<f64>| -> f64 {
            let f = m.forward_frame(&cam, pose, &cfg).unwrap();
            (0..64)
                .map(|i| f.image.color[i].dot(&gc[i]) + f.image.normal[i].dot(&gn[i]))
                .sum()
        };
        let h = 1e-6;
        let check = |analytic: f64, fd: f64, what: &str| {
            let err = (analytic - fd).abs();
            let rel = err / fd.abs().max(analytic.abs()).max(1e-12);
            assert!(
                rel < 1e-4 || err < 1e-7,
                "{what}: analytic {analytic} fd {fd}"
            );
        };

        // Log scales, all faces.
        for f in 0..model.face_count() {
            for k in 0..2 {
                let mut mp = model.clone();
                let mut mm = model.clone();
                mp.log_scales[f][k] += h;
                mm.log_scales[f][k] -= h;
                let fd = (probe(&mp, &pose) - probe(&mm, &pose)) / (2.0 * h);
                check(grads.log_scales[f][k], fd, &format!("log_scales[{f}][{k}]"));
            }
        }
        // Sampled field parameters, both fields.
        for (field_name, g_chunks) in [
            ("displacement", grads.displacement.chunks()),
            ("color", grads.color.chunks()),
        ] {
            for (ci, chunk) in g_chunks.iter().enumerate() {
                let stride = (chunk.len() / 5).max(1);
                for idx in (0..chunk.len()).step_by(stride).take(5) {
                    let mut mp = model.clone();
                    let mut mm = model.clone();
                    {
                        let field = if field_name == "displacement" {
                            &mut mp.displacement
                        } else {
                            &mut mp.color
                        };
                        field.param_chunks_mut()[ci][idx] += h;
                    }
                    {
                        let field = if field_name == "displacement" {
                            &mut mm.displacement
                        } else {
                            &mut mm.color
                        };
                        field.param_chunks_mut()[ci][idx] -= h;
                    }
                    let fd = (probe(&mp, &pose) - probe(&mm, &pose)) / (2.0 * h);
                    check(
                        chunk[idx],
                        fd,
                        &format!("{field_name} chunk {ci} idx {idx}"),
                    );
                }
            }
        }
        // Rest joints.
        for j in 0..2 {
            for k in 0..3 {
                let mut mp = model.clone();
                let mut mm = model.clone();
                mp.skeleton_mut().rest_joints_mut()[j][k] += h;
                mm.skeleton_mut().rest_joints_mut()[j][k] -= h;
                let fd = (probe(&mp, &pose) - probe(&mm, &pose)) / (2.0 * h);
                check(grads.rest_joints[j][k], fd, &format!("joint[{j}][{k}]"));
            }
        }
        // Pose parameters.
        for j in 0..2 {
            for k in 0..3 {
                let mut pp = pose.clone();
                let mut pm = pose.clone();
                pp.joint_rotations[j][k] += h;
                pm.joint_rotations[j][k] -= h;
                let fd = (probe(&model, &pp) - probe(&model, &pm)) / (2.0 * h);
                check(
                    grads.pose_rotations[j][k],
                    fd,
                    &format!("pose_rot[{j}][{k}]"),
                );
            }
        }
        for k in 0..3 {
            let mut pp = pose.clone();
            let mut pm = pose.clone();
            pp.translation[k] += h;
            pm.translation[k] -= h;
            let fd = (probe(&model, &pp) - probe(&model, &pm)) / (2.0 * h);
            check(grads.pose_translation[k], fd, &format!("pose_trans[{k}]"));
        }
    }

    #[test]
    fn normal_consistency_gradient_routes_through_skinning() {
        // Only the vertex-gradient path: FD the NC value through pose
        // changes and compare with backward_frame fed g_posed_extra.
        let (mesh, skeleton, weights) = plane_rig();
        let model = BoundSplatModel::new(mesh, skeleton, weights, small_grid(), 13).unwrap();
        let cam = test_camera();
        let cfg = RasterConfig::default();
        // Fold the plane so adjacent normals differ and the NC term is
        // curved in the pose.
        let pose = PoseFrame {
            joint_rotations: vec![Vector3::zeros(), Vector3::new(0.0, 0.0, 0.9)],
            translation: Vector3::zeros(),
        };
        let fwd = model.forward_frame(&cam, &pose, &cfg).unwrap();
        let (_, nc_grad) =
            crate::losses::normal_consistency(&fwd.posed_vertices, model.mesh(), model.adjacency());
        let zeros_img = vec![Vector3::zeros(); 64];
        let grads = model
            .backward_frame(&cam, &pose, &fwd, &cfg, &zeros_img, &zeros_img, &nc_grad)
            .unwrap();
        let nc_of = |pose: &PoseFrame<f64>| -> f64 {
            let f = model.forward_frame(&cam, pose, &cfg).unwrap();
            crate::losses::normal_consistency(&f.posed_vertices, model.mesh(), model.adjacency()).0
        };
        let h = 1e-6;
        for j in 0..2 {
            for k in 0..3 {
                let mut pp = pose.clone();
                let mut pm = pose.clone();
                pp.joint_rotations[j][k] += h;
                pm.joint_rotations[j][k] -= h;
                let fd = (nc_of(&pp) - nc_of(&pm)) / (2.0 * h);
                assert_relative_eq!(
                    grads.pose_rotations[j][k],
                    fd,
                    epsilon = 1e-7,
                    max_relative = 1e-4
                );
            }
        }
    }
}
