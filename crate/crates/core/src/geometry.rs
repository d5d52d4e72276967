//! Triangle-mesh geometry: per-face centroids, normals, tangent frames, the
//! in-plane rotation lift and the splat covariance, plus the backward passes
//! that push image-space gradients into vertex positions and scales.
//!
//! Conventions: faces are index triples `[i0, i1, i2]`, counter-clockwise
//! when seen from outside, so `(v1 - v0) x (v2 - v0)` points outward. A face
//! frame is the rotation whose columns are `[normal, first-edge, normal x
//! first-edge]`, which has determinant +1.

use crate::scalar::Real;
use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Faces with area at or below this (in squared length units) are treated as
/// degenerate and carry no splat.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Out-of-plane thickness of a surface splat, in mesh units (1 mm for meshes
/// in meters).
pub const SURFACE_EPSILON: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("face {face} is degenerate (area {area} <= {DEGENERATE_AREA})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("face {face} references vertex {vertex} but mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        vertex: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    RepeatedFaceIndex { face: usize },
    #[error("in-plane rotation (0, 0) has no direction")]
    ZeroRotation,
    #[error("non-positive splat scale {scale}")]
    NonPositiveScale { scale: f64 },
}

/// Static topology plus canonical (rest) vertex positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh<T: Real> {
    vertices: Vec<Vector3<T>>,
    faces: Vec<[usize; 3]>,
}

impl<T: Real> TemplateMesh<T> {
    pub fn new(vertices: Vec<Vector3<T>>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(GeometryError::FaceIndexOutOfRange {
                        face: fi,
                        vertex: v,
                        vertex_count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::RepeatedFaceIndex { face: fi });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Centroid of a face under arbitrary vertex positions (posed or canonical).
    pub fn face_centroid(&self, positions: &[Vector3<T>], face: usize) -> Vector3<T> {
        let [a, b, c] = self.faces[face];
        face_centroid(positions[a], positions[b], positions[c])
    }

    pub fn face_normal(
        &self,
        positions: &[Vector3<T>],
        face: usize,
    ) -> Result<Vector3<T>, GeometryError> {
        let [a, b, c] = self.faces[face];
        face_normal(positions[a], positions[b], positions[c])
            .ok_or_else(|| self.degenerate(positions, face))
    }

    pub fn face_frame(
        &self,
        positions: &[Vector3<T>],
        face: usize,
    ) -> Result<FaceFrame<T>, GeometryError> {
        let [a, b, c] = self.faces[face];
        build_face_frame(positions[a], positions[b], positions[c])
            .ok_or_else(|| self.degenerate(positions, face))
    }

    pub fn face_area(&self, positions: &[Vector3<T>], face: usize) -> T {
        let [a, b, c] = self.faces[face];
        triangle_area(positions[a], positions[b], positions[c])
    }

    fn degenerate(&self, positions: &[Vector3<T>], face: usize) -> GeometryError {
        GeometryError::DegenerateFace {
            face,
            area: self.face_area(positions, face).as_f64(),
        }
    }

    /// Unordered pairs of faces sharing an edge, sorted and deduplicated so
    /// iteration order is reproducible.
    pub fn edge_adjacent_faces(&self) -> Vec<(usize, usize)> {
        use std::collections::HashMap;
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                edge_faces.entry(key).or_default().push(fi);
            }
        }
        let mut pairs = Vec::new();
        for faces in edge_faces.values() {
            for i in 0..faces.len() {
                for j in i + 1..faces.len() {
                    let (a, b) = (faces[i].min(faces[j]), faces[i].max(faces[j]));
                    pairs.push((a, b));
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Axis-aligned bounds of the canonical vertices.
    pub fn aabb(&self) -> (Vector3<T>, Vector3<T>) {
        let mut lo = Vector3::repeat(T::of(f64::INFINITY));
        let mut hi = Vector3::repeat(T::of(f64::NEG_INFINITY));
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn mean_edge_length(&self) -> T {
        let mut sum = T::zero();
        let mut count = 0usize;
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                sum += (self.vertices[a] - self.vertices[b]).norm();
                count += 1;
            }
        }
        if count == 0 {
            T::zero()
        } else {
            sum / T::of_usize(count)
        }
    }
}

/// Orthonormal right-handed frame attached to a face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFrame<T: Real> {
    /// Unit face normal.
    pub r0: Vector3<T>,
    /// Unit direction of the face's first edge.
    pub r1: Vector3<T>,
    /// `r0 x r1`, completing the frame.
    pub r2: Vector3<T>,
}

impl<T: Real> FaceFrame<T> {
    /// Columns `[r0, r1, r2]` as a rotation matrix.
    pub fn to_matrix(&self) -> Matrix3<T> {
        Matrix3::from_columns(&[self.r0, self.r1, self.r2])
    }
}

pub fn face_centroid<T: Real>(v0: Vector3<T>, v1: Vector3<T>, v2: Vector3<T>) -> Vector3<T> {
    (v0 + v1 + v2) / T::of(3.0)
}

pub fn triangle_area<T: Real>(v0: Vector3<T>, v1: Vector3<T>, v2: Vector3<T>) -> T {
    (v1 - v0).cross(&(v2 - v0)).norm() * T::of(0.5)
}

/// Unit outward normal, or `None` for a degenerate face.
pub fn face_normal<T: Real>(v0: Vector3<T>, v1: Vector3<T>, v2: Vector3<T>) -> Option<Vector3<T>> {
    let n = (v1 - v0).cross(&(v2 - v0));
    let len = n.norm();
    if len * T::of(0.5) <= T::of(DEGENERATE_AREA) {
        return None;
    }
    Some(n / len)
}

/// Frame `[normal, normalize(v1 - v0), normal x edge]`; `None` when the face
/// is degenerate.
pub fn build_face_frame<T: Real>(
    v0: Vector3<T>,
    v1: Vector3<T>,
    v2: Vector3<T>,
) -> Option<FaceFrame<T>> {
    let r0 = face_normal(v0, v1, v2)?;
    let e1 = v1 - v0;
    let r1 = e1 / e1.norm();
    let u = r0.cross(&r1);
    let r2 = u / u.norm();
    Some(FaceFrame { r0, r1, r2 })
}

/// Rotates the in-plane axes of `frame` by the angle of the unnormalized
/// complex number `rot2d = (x, y)`; the normal column is untouched.
pub fn lift_rotation<T: Real>(
    frame: &FaceFrame<T>,
    rot2d: Vector2<T>,
) -> Result<Matrix3<T>, GeometryError> {
    let len = rot2d.norm();
    if len == T::zero() {
        return Err(GeometryError::ZeroRotation);
    }
    let c = rot2d.x / len;
    let s = rot2d.y / len;
    let col1 = frame.r1 * c + frame.r2 * s;
    let col2 = frame.r2 * c - frame.r1 * s;
    Ok(Matrix3::from_columns(&[frame.r0, col1, col2]))
}

/// `R diag(s^2) R^T`, symmetrized against round-off.
pub fn build_covariance<T: Real>(
    rotation: &Matrix3<T>,
    scales: Vector3<T>,
) -> Result<Matrix3<T>, GeometryError> {
    for k in 0..3 {
        if scales[k] <= T::zero() {
            return Err(GeometryError::NonPositiveScale {
                scale: scales[k].as_f64(),
            });
        }
    }
    let d = Matrix3::from_diagonal(&Vector3::new(
        scales.x * scales.x,
        scales.y * scales.y,
        scales.z * scales.z,
    ));
    let sigma = rotation * d * rotation.transpose();
    Ok((sigma + sigma.transpose()) * T::of(0.5))
}

// ---------------------------------------------------------------------------
// Backward passes. Inputs are recomputed rather than cached: the forward
// expressions are a handful of flops per face.

fn normalize_backward<T: Real>(raw_norm: T, unit: Vector3<T>, g_unit: Vector3<T>) -> Vector3<T> {
    (g_unit - unit * unit.dot(&g_unit)) / raw_norm
}

/// Gradients of a scalar loss w.r.t. the three vertices, given its gradient
/// w.r.t. the unit face normal.
pub fn face_normal_backward<T: Real>(
    v0: Vector3<T>,
    v1: Vector3<T>,
    v2: Vector3<T>,
    g_normal: Vector3<T>,
) -> Option<[Vector3<T>; 3]> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let n_raw = e1.cross(&e2);
    let len = n_raw.norm();
    if len * T::of(0.5) <= T::of(DEGENERATE_AREA) {
        return None;
    }
    let n = n_raw / len;
    let g_raw = normalize_backward(len, n, g_normal);
    let g_e1 = e2.cross(&g_raw);
    let g_e2 = g_raw.cross(&e1);
    Some([-(g_e1 + g_e2), g_e1, g_e2])
}

/// Gradients w.r.t. the three vertices given gradients w.r.t. the frame
/// columns. Returns `None` for a degenerate face (the forward skips those).
pub fn face_frame_backward<T: Real>(
    v0: Vector3<T>,
    v1: Vector3<T>,
    v2: Vector3<T>,
    g_r0: Vector3<T>,
    g_r1: Vector3<T>,
    g_r2: Vector3<T>,
) -> Option<[Vector3<T>; 3]> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let n_raw = e1.cross(&e2);
    let n_len = n_raw.norm();
    if n_len * T::of(0.5) <= T::of(DEGENERATE_AREA) {
        return None;
    }
    let r0 = n_raw / n_len;
    let e1_len = e1.norm();
    let r1 = e1 / e1_len;
    let u = r0.cross(&r1);
    let u_len = u.norm();
    let r2 = u / u_len;

    // r2 = normalize(r0 x r1)
    let g_u = normalize_backward(u_len, r2, g_r2);
    let g_r0_acc = r1.cross(&g_u) + g_r0;
    let g_r1_acc = g_u.cross(&r0) + g_r1;

    // r1 = normalize(e1)
    let mut g_e1 = normalize_backward(e1_len, r1, g_r1_acc);

    // r0 = normalize(e1 x e2)
    let g_raw = normalize_backward(n_len, r0, g_r0_acc);
    g_e1 += e2.cross(&g_raw);
    let g_e2 = g_raw.cross(&e1);

    Some([-(g_e1 + g_e2), g_e1, g_e2])
}

/// Splits frame-column gradients of the lifted rotation back onto the raw
/// frame columns. The in-plane rotation itself is frozen, so no gradient is
/// produced for it.
pub fn lift_rotation_backward<T: Real>(
    rot2d: Vector2<T>,
    g_lifted: &Matrix3<T>,
) -> (Vector3<T>, Vector3<T>, Vector3<T>) {
    let len = rot2d.norm();
    let c = rot2d.x / len;
    let s = rot2d.y / len;
    let g0 = g_lifted.column(0).into_owned();
    let g1 = g_lifted.column(1).into_owned();
    let g2 = g_lifted.column(2).into_owned();
    (g0, g1 * c - g2 * s, g1 * s + g2 * c)
}

/// Gradients w.r.t. the rotation matrix and the three scales given the
/// gradient w.r.t. the covariance.
pub fn covariance_backward<T: Real>(
    rotation: &Matrix3<T>,
    scales: Vector3<T>,
    g_sigma: &Matrix3<T>,
) -> (Matrix3<T>, Vector3<T>) {
    let d = Matrix3::from_diagonal(&Vector3::new(
        scales.x * scales.x,
        scales.y * scales.y,
        scales.z * scales.z,
    ));
    let g_sym = g_sigma + g_sigma.transpose();
    let g_rot = g_sym * rotation * d;
    let mut g_scales = Vector3::zeros();
    for k in 0..3 {
        let rk = rotation.column(k).into_owned();
        g_scales[k] = T::of(2.0) * scales[k] * rk.dot(&(g_sigma * rk));
    }
    (g_rot, g_scales)
}

/// Unit icosphere: a subdivided icosahedron with vertices pushed onto the
/// sphere. Subdivision 0 is the bare icosahedron (20 faces); each level
/// quadruples the face count. Used by synthetic scenes and oracle tests.
pub fn icosphere<T: Real>(subdivisions: usize) -> TemplateMesh<T> {
    let phi = (T::one() + T::of(5.0).sqrt()) * T::of(0.5);
    let mut vertices: Vec<Vector3<T>> = [
        (-T::one(), phi, T::zero()),
        (T::one(), phi, T::zero()),
        (-T::one(), -phi, T::zero()),
        (T::one(), -phi, T::zero()),
        (T::zero(), -T::one(), phi),
        (T::zero(), T::one(), phi),
        (T::zero(), -T::one(), -phi),
        (T::zero(), T::one(), -phi),
        (phi, T::zero(), -T::one()),
        (phi, T::zero(), T::one()),
        (-phi, T::zero(), -T::one()),
        (-phi, T::zero(), T::one()),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) * T::of(0.5)).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            next.push([f[0], mids[0], mids[2]]);
            next.push([f[1], mids[1], mids[0]]);
            next.push([f[2], mids[2], mids[1]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        faces = next;
    }
    TemplateMesh::new(vertices, faces).expect("icosphere construction is valid by induction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn tri_unit() -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        )
    }

    fn random_triangle(rng: &mut ChaCha12Rng) -> [Vector3<f64>; 3] {
        loop {
            let v: Vec<Vector3<f64>> = (0..3)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            if triangle_area(v[0], v[1], v[2]) > 1e-4 {
                return [v[0], v[1], v[2]];
            }
        }
    }

    fn random_rotation(rng: &mut ChaCha12Rng) -> Matrix3<f64> {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        q.to_rotation_matrix().into_inner()
    }

    #[test]
    fn centroid_of_unit_triangle() {
        let (a, b, c) = tri_unit();
        let g = face_centroid(a, b, c);
        assert_relative_eq!(g, Vector3::new(1.0 / 3.0, 1.0 / 3.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn centroid_matches_compensated_sum() {
        // Kahan-compensated per-coordinate oracle.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let [a, b, c] = random_triangle(&mut rng);
            let g = face_centroid(a, b, c);
            for k in 0..3 {
                let mut sum = 0.0f64;
                let mut comp = 0.0f64;
                for x in [a[k], b[k], c[k]] {
                    let y = x - comp;
                    let t = sum + y;
                    comp = (t - sum) - y;
                    sum = t;
                }
                assert!((g[k] - sum / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centroid_f32_tracks_f64_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..100 {
            let [a, b, c] = random_triangle(&mut rng);
            let g64 = face_centroid(a, b, c);
            let g32 = face_centroid(
                a.map(|x| x as f32),
                b.map(|x| x as f32),
                c.map(|x| x as f32),
            );
            for k in 0..3 {
                assert!((g32[k] as f64 - g64[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normal_of_ccw_triangle_points_up() {
        let (a, b, c) = tri_unit();
        let n = face_normal(a, b, c).unwrap();
        assert_relative_eq!(n, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        // Swapping two vertices flips orientation.
        let n_flipped = face_normal(a, c, b).unwrap();
        assert_relative_eq!(n_flipped, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_face_is_rejected() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 0.0, 0.0);
        let c = Vector3::new(2.0, 0.0, 0.0);
        assert!(face_normal(a, b, c).is_none());
        assert!(build_face_frame(a, b, c).is_none());

        let mesh = TemplateMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(
            mesh.face_normal(mesh.vertices(), 0),
            Err(GeometryError::DegenerateFace { face: 0, .. })
        ));
    }

    #[test]
    fn frame_of_axis_aligned_triangle() {
        let (a, b, c) = tri_unit();
        let f = build_face_frame(a, b, c).unwrap();
        assert_relative_eq!(f.r0, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(f.r1, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(f.r2, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn frame_is_orthonormal_and_right_handed() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let [a, b, c] = random_triangle(&mut rng);
            let f = build_face_frame(a, b, c).unwrap();
            let m = f.to_matrix();
            let gram = m.transpose() * m;
            assert_relative_eq!(gram, Matrix3::identity(), epsilon = 1e-6);
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn frame_is_rotation_equivariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..200 {
            let [a, b, c] = random_triangle(&mut rng);
            let q = random_rotation(&mut rng);
            let f = build_face_frame(a, b, c).unwrap();
            let f_rot = build_face_frame(q * a, q * b, q * c).unwrap();
            assert_relative_eq!(f_rot.to_matrix(), q * f.to_matrix(), epsilon = 1e-6);
        }
    }

    #[test]
    fn lift_identity_and_quarter_turn() {
        let (a, b, c) = tri_unit();
        let f = build_face_frame(a, b, c).unwrap();
        let id = lift_rotation(&f, Vector2::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(id, f.to_matrix(), epsilon = 1e-15);

        // (0, 1) is a quarter turn: the in-plane axes become (r2, -r1).
        let quarter = lift_rotation(&f, Vector2::new(0.0, 1.0)).unwrap();
        assert_relative_eq!(quarter.column(1).into_owned(), f.r2, epsilon = 1e-15);
        assert_relative_eq!(quarter.column(2).into_owned(), -f.r1, epsilon = 1e-15);
    }

    #[test]
    fn lift_is_scale_invariant_in_rot2d() {
        let (a, b, c) = tri_unit();
        let f = build_face_frame(a, b, c).unwrap();
        let m1 = lift_rotation(&f, Vector2::new(3.0, 4.0)).unwrap();
        let m2 = lift_rotation(&f, Vector2::new(0.6, 0.8)).unwrap();
        assert_relative_eq!(m1, m2, epsilon = 1e-15);
        assert_eq!(
            lift_rotation(&f, Vector2::new(0.0, 0.0)),
            Err(GeometryError::ZeroRotation)
        );
    }

    #[test]
    fn lift_stays_orthonormal() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..300 {
            let [a, b, c] = random_triangle(&mut rng);
            let f = build_face_frame(a, b, c).unwrap();
            let rot2d = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            if rot2d.norm() < 1e-3 {
                continue;
            }
            let m = lift_rotation(&f, rot2d).unwrap();
            assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn covariance_identity_rotation_is_diagonal() {
        let s = Vector3::new(0.001, 0.2, 0.3);
        let sigma = build_covariance(&Matrix3::identity(), s).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(1e-6, 0.04, 0.09));
        assert_relative_eq!(sigma, expect, epsilon = 1e-15);
    }

    #[test]
    fn covariance_rejects_nonpositive_scale() {
        assert!(matches!(
            build_covariance(&Matrix3::identity(), Vector3::new(0.0, 0.1, 0.1)),
            Err(GeometryError::NonPositiveScale { .. })
        ));
    }

    #[test]
    fn covariance_matches_brute_force_and_spectrum() {
        // Independent oracle: explicit triple loop product, no nalgebra ops.
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        for _ in 0..200 {
            let [a, b, c] = random_triangle(&mut rng);
            let f = build_face_frame(a, b, c).unwrap();
            let r = lift_rotation(&f, Vector2::new(rng.gen_range(-1.0..1.0), 1.0)).unwrap();
            let s = Vector3::new(
                rng.gen_range(0.01..0.5),
                rng.gen_range(0.01..0.5),
                rng.gen_range(0.01..0.5),
            );
            let sigma = build_covariance(&r, s).unwrap();

            let mut oracle = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += r[(i, k)] * s[k] * s[k] * r[(j, k)];
                    }
                    oracle[i][j] = acc;
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    assert!((sigma[(i, j)] - oracle[i][j]).abs() < 1e-10);
                }
            }

            // Trace is rotation invariant; eigenvalues are the squared scales.
            let trace_expect = s.x * s.x + s.y * s.y + s.z * s.z;
            assert_relative_eq!(sigma.trace(), trace_expect, epsilon = 1e-12);
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut expect: Vec<f64> = vec![s.x * s.x, s.y * s.y, s.z * s.z];
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, x) in eig.iter().zip(&expect) {
                assert!((e - x).abs() < 1e-9, "eig {e} vs {x}");
            }
        }
    }

    #[test]
    fn mesh_validation_catches_bad_faces() {
        let verts: Vec<Vector3<f64>> = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(matches!(
            TemplateMesh::new(verts.clone(), vec![[0, 1, 3]]),
            Err(GeometryError::FaceIndexOutOfRange { vertex: 3, .. })
        ));
        assert!(matches!(
            TemplateMesh::new(verts, vec![[0, 1, 1]]),
            Err(GeometryError::RepeatedFaceIndex { face: 0 })
        ));
    }

    #[test]
    fn adjacency_of_two_triangle_quad() {
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let mesh = TemplateMesh::new(verts, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        assert_eq!(mesh.edge_adjacent_faces(), vec![(0, 1)]);
    }

    // Finite-difference checks for every backward routine.

    fn fd_vertex_grad<F: Fn(&[Vector3<f64>; 3]) -> f64>(
        v: &[Vector3<f64>; 3],
        f: F,
        h: f64,
    ) -> [Vector3<f64>; 3] {
        let mut out = [Vector3::zeros(); 3];
        for vi in 0..3 {
            for k in 0..3 {
                let mut plus = *v;
                let mut minus = *v;
                plus[vi][k] += h;
                minus[vi][k] -= h;
                out[vi][k] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn face_normal_backward_matches_fd() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let v = random_triangle(&mut rng);
            let g: Vector3<f64> = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let analytic = face_normal_backward(v[0], v[1], v[2], g).unwrap();
            let fd = fd_vertex_grad(
                &v,
                |vv| face_normal(vv[0], vv[1], vv[2]).unwrap().dot(&g),
                1e-6,
            );
            for vi in 0..3 {
                assert_relative_eq!(analytic[vi], fd[vi], epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn face_frame_backward_matches_fd() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        for _ in 0..50 {
            let v = random_triangle(&mut rng);
            let g0: Vector3<f64> = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let g1: Vector3<f64> = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let g2: Vector3<f64> = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let analytic = face_frame_backward(v[0], v[1], v[2], g0, g1, g2).unwrap();
            let fd = fd_vertex_grad(
                &v,
                |vv| {
                    let f = build_face_frame(vv[0], vv[1], vv[2]).unwrap();
                    f.r0.dot(&g0) + f.r1.dot(&g1) + f.r2.dot(&g2)
                },
                1e-6,
            );
            for vi in 0..3 {
                assert_relative_eq!(analytic[vi], fd[vi], epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn covariance_backward_matches_fd() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for _ in 0..50 {
            let [a, b, c] = random_triangle(&mut rng);
            let f = build_face_frame(a, b, c).unwrap();
            let r = lift_rotation(&f, Vector2::new(0.8, 0.6)).unwrap();
            let s = Vector3::new(
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
            );
            let mut g_sigma = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    g_sigma[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let (g_rot, g_scales) = covariance_backward(&r, s, &g_sigma);

            let frob = |m: &Matrix3<f64>| {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += m[(i, j)] * g_sigma[(i, j)];
                    }
                }
                acc
            };
            let h = 1e-6;
            for k in 0..3 {
                let mut sp = s;
                let mut sm = s;
                sp[k] += h;
                sm[k] -= h;
                let fd = (frob(&build_covariance(&r, sp).unwrap())
                    - frob(&build_covariance(&r, sm).unwrap()))
                    / (2.0 * h);
                assert_relative_eq!(g_scales[k], fd, epsilon = 1e-5, max_relative = 1e-5);
            }
            for i in 0..3 {
                for j in 0..3 {
                    let mut rp = r;
                    let mut rm = r;
                    rp[(i, j)] += h;
                    rm[(i, j)] -= h;
                    // build_covariance validates scales, not orthonormality,
                    // so off-manifold perturbations are fine for FD.
                    let fd = (frob(&build_covariance(&rp, s).unwrap())
                        - frob(&build_covariance(&rm, s).unwrap()))
                        / (2.0 * h);
                    assert_relative_eq!(g_rot[(i, j)], fd, epsilon = 1e-5, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn icosphere_counts_and_radius() {
        // V - E + F = 2 for a sphere; F quadruples per level.
        for (level, faces) in [(0usize, 20usize), (1, 80), (2, 320), (3, 1280)] {
            let sphere = icosphere::<f64>(level);
            assert_eq!(sphere.face_count(), faces);
            let edges = faces * 3 / 2;
            assert_eq!(sphere.vertex_count(), 2 + edges - faces);
            for v in sphere.vertices() {
                assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
            }
            // Outward orientation: normals point away from the origin.
            for f in 0..sphere.face_count() {
                let n = sphere
                    .face_normal(sphere.vertices(), f)
                    .expect("icosphere faces are non-degenerate");
                let c = sphere.face_centroid(sphere.vertices(), f);
                assert!(n.dot(&c) > 0.0, "face {f} points inward");
            }
        }
    }

    proptest! {
        #[test]
        fn prop_centroid_translation_equivariant(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
            cx in -1.0f64..1.0, cy in -1.0f64..1.0, cz in -1.0f64..1.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let (a, b, c) = (
                Vector3::new(ax, ay, az),
                Vector3::new(bx, by, bz),
                Vector3::new(cx, cy, cz),
            );
            let t = Vector3::new(tx, ty, tz);
            let g = face_centroid(a, b, c);
            let gt = face_centroid(a + t, b + t, c + t);
            prop_assert!((gt - (g + t)).norm() < 1e-12);
        }

        #[test]
        fn prop_normal_is_unit_and_orthogonal(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
            cx in -1.0f64..1.0, cy in -1.0f64..1.0, cz in -1.0f64..1.0,
        ) {
            let (a, b, c) = (
                Vector3::new(ax, ay, az),
                Vector3::new(bx, by, bz),
                Vector3::new(cx, cy, cz),
            );
            prop_assume!(triangle_area(a, b, c) > 1e-6);
            let n = face_normal(a, b, c).unwrap();
            prop_assert!((n.norm() - 1.0).abs() < 1e-9);
            prop_assert!(n.dot(&(b - a)).abs() < 1e-6);
            prop_assert!(n.dot(&(c - a)).abs() < 1e-6);
        }
    }
}
