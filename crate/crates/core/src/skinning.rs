//! Linear blend skinning on a joint tree.
//!
//! Pose semantics: each joint carries an intrinsic-XYZ Euler rotation applied
//! about its rest position, composed parent to child; joint 0 additionally
//! receives the global translation. Rest joints are free parameters, so the
//! forward pass and its backward both treat them as inputs.

use crate::scalar::Real;
use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Maximum influences kept per vertex; loaders truncate to the top entries
/// and renormalize.
pub const MAX_INFLUENCES: usize = 4;

/// Row weight sums must stay within this of 1 at construction.
pub const WEIGHT_SUM_TOL_STRICT: f64 = 1e-6;

/// ... and within this of 1 whenever skinning runs.
pub const WEIGHT_SUM_TOL_RUNTIME: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum SkinningError {
    #[error("joint 0 must be the root (parent -1)")]
    RootNotFirst,
    #[error("joint {joint} has parent {parent} out of range for {joint_count} joints")]
    ParentOutOfRange {
        joint: usize,
        parent: usize,
        joint_count: usize,
    },
    #[error("joint {joint} is part of a parent cycle")]
    CyclicParents { joint: usize },
    #[error("expected exactly one root; joint {joint} also has no parent")]
    MultipleRoots { joint: usize },
    #[error("skeleton has {joints} joints but {rows} rest positions")]
    JointCountMismatch { joints: usize, rows: usize },
    #[error("vertex {vertex} weight row sums to {sum}, expected 1")]
    InvalidWeights { vertex: usize, sum: f64 },
    #[error("vertex {vertex} weight references joint {joint} of {joint_count}")]
    WeightJointOutOfRange {
        vertex: usize,
        joint: usize,
        joint_count: usize,
    },
    #[error("vertex {vertex} has a negative weight")]
    NegativeWeight { vertex: usize },
    #[error("vertex {vertex} has {count} influences, limit {MAX_INFLUENCES}")]
    TooManyInfluences { vertex: usize, count: usize },
    #[error("pose has {pose} joint rotations, skeleton has {skeleton}")]
    PoseJointMismatch { pose: usize, skeleton: usize },
    #[error("{positions} vertices but {rows} weight rows")]
    VertexCountMismatch { positions: usize, rows: usize },
}

/// Rotation + translation, stored unpacked; cheaper to chain than 4x4s and
/// keeps the rigid structure explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `self` after `other`: `(self * other)(x) = self(other(x))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Deviation of the rotation block from orthonormality.
    pub fn rigidity_error(&self) -> T {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// Joint tree with rest positions. `parents[0]` is `None`; children always
/// appear after their topological ancestors in `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T: Real> {
    rest_joints: Vec<Vector3<T>>,
    parents: Vec<Option<usize>>,
    order: Vec<usize>,
}

impl<T: Real> Skeleton<T> {
    pub fn new(
        rest_joints: Vec<Vector3<T>>,
        parents: Vec<Option<usize>>,
    ) -> Result<Self, SkinningError> {
        let n = parents.len();
        if rest_joints.len() != n {
            return Err(SkinningError::JointCountMismatch {
                joints: n,
                rows: rest_joints.len(),
            });
        }
        if n == 0 || parents[0].is_some() {
            return Err(SkinningError::RootNotFirst);
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(SkinningError::MultipleRoots { joint: j }),
                Some(p) if *p >= n => {
                    return Err(SkinningError::ParentOutOfRange {
                        joint: j,
                        parent: *p,
                        joint_count: n,
                    })
                }
                _ => {}
            }
        }
        // Walking up more than n steps without reaching the root means a cycle.
        for j in 1..n {
            let mut cur = j;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(SkinningError::CyclicParents { joint: j });
                }
            }
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(j);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![0usize];
        while let Some(j) = stack.pop() {
            order.push(j);
            // Reverse keeps sibling order stable under the stack pop.
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        Ok(Self {
            rest_joints,
            parents,
            order,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn rest_joints(&self) -> &[Vector3<T>] {
        &self.rest_joints
    }

    pub fn rest_joints_mut(&mut self) -> &mut [Vector3<T>] {
        &mut self.rest_joints
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }
}

/// Per-frame articulation: intrinsic-XYZ Euler angles per joint (joint 0 is
/// the global orientation) plus the root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame<T: Real> {
    pub joint_rotations: Vec<Vector3<T>>,
    pub translation: Vector3<T>,
}

impl<T: Real> PoseFrame<T> {
    pub fn rest(joint_count: usize) -> Self {
        Self {
            joint_rotations: vec![Vector3::zeros(); joint_count],
            translation: Vector3::zeros(),
        }
    }
}

/// Sparse per-vertex joint influences, at most [`MAX_INFLUENCES`] each,
/// summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights<T: Real> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> SkinWeights<T> {
    pub fn new(rows: Vec<Vec<(usize, T)>>, joint_count: usize) -> Result<Self, SkinningError> {
        for (vi, row) in rows.iter().enumerate() {
            if row.len() > MAX_INFLUENCES {
                return Err(SkinningError::TooManyInfluences {
                    vertex: vi,
                    count: row.len(),
                });
            }
            let mut sum = T::zero();
            for &(j, w) in row {
                if j >= joint_count {
                    return Err(SkinningError::WeightJointOutOfRange {
                        vertex: vi,
                        joint: j,
                        joint_count,
                    });
                }
                if w < T::zero() {
                    return Err(SkinningError::NegativeWeight { vertex: vi });
                }
                sum += w;
            }
            if (sum - T::one()).abs() > T::of(WEIGHT_SUM_TOL_STRICT) {
                return Err(SkinningError::InvalidWeights {
                    vertex: vi,
                    sum: sum.as_f64(),
                });
            }
        }
        Ok(Self { rows })
    }

    /// Builds from dense rows (one weight per joint per vertex), keeping the
    /// top [`MAX_INFLUENCES`] influences and renormalizing.
    pub fn from_dense(dense: &[Vec<T>], joint_count: usize) -> Result<Self, SkinningError> {
        let mut rows = Vec::with_capacity(dense.len());
        for (vi, drow) in dense.iter().enumerate() {
            if drow.len() != joint_count {
                return Err(SkinningError::JointCountMismatch {
                    joints: joint_count,
                    rows: drow.len(),
                });
            }
            let mut entries: Vec<(usize, T)> = drow
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != T::zero())
                .map(|(j, w)| (j, *w))
                .collect();
            for &(_, w) in &entries {
                if w < T::zero() {
                    return Err(SkinningError::NegativeWeight { vertex: vi });
                }
            }
            entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            entries.truncate(MAX_INFLUENCES);
            entries.sort_by_key(|e| e.0);
            let sum: T = entries.iter().fold(T::zero(), |acc, e| acc + e.1);
            if sum <= T::zero() {
                return Err(SkinningError::InvalidWeights {
                    vertex: vi,
                    sum: sum.as_f64(),
                });
            }
            for e in &mut entries {
                e.1 /= sum;
            }
            rows.push(entries);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<(usize, T)>] {
        &self.rows
    }

    pub fn vertex_count(&self) -> usize {
        self.rows.len()
    }

    /// Dense row view, for serialization.
    pub fn to_dense(&self, joint_count: usize) -> Vec<Vec<T>> {
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![T::zero(); joint_count];
                for &(j, w) in row {
                    d[j] = w;
                }
                d
            })
            .collect()
    }
}

/// Intrinsic XYZ: `R = Rx(a) * Ry(b) * Rz(c)`.
pub fn euler_xyz_matrix<T: Real>(angles: &Vector3<T>) -> Matrix3<T> {
    let (sa, ca) = angles.x.sin_cos();
    let (sb, cb) = angles.y.sin_cos();
    let (sc, cc) = angles.z.sin_cos();
    let rx = Matrix3::new(
        T::one(),
        T::zero(),
        T::zero(),
        T::zero(),
        ca,
        -sa,
        T::zero(),
        sa,
        ca,
    );
    let ry = Matrix3::new(
        cb,
        T::zero(),
        sb,
        T::zero(),
        T::one(),
        T::zero(),
        -sb,
        T::zero(),
        cb,
    );
    let rz = Matrix3::new(
        cc,
        -sc,
        T::zero(),
        sc,
        cc,
        T::zero(),
        T::zero(),
        T::zero(),
        T::one(),
    );
    rx * ry * rz
}

/// Partials of [`euler_xyz_matrix`] w.r.t. each angle.
pub fn euler_xyz_matrix_partials<T: Real>(angles: &Vector3<T>) -> [Matrix3<T>; 3] {
    let (sa, ca) = angles.x.sin_cos();
    let (sb, cb) = angles.y.sin_cos();
    let (sc, cc) = angles.z.sin_cos();
    let z = T::zero();
    let rx = Matrix3::new(T::one(), z, z, z, ca, -sa, z, sa, ca);
    let ry = Matrix3::new(cb, z, sb, z, T::one(), z, -sb, z, cb);
    let rz = Matrix3::new(cc, -sc, z, sc, cc, z, z, z, T::one());
    let dx = Matrix3::new(z, z, z, z, -sa, -ca, z, ca, -sa);
    let dy = Matrix3::new(-sb, z, cb, z, z, z, -cb, z, -sb);
    let dz = Matrix3::new(-sc, -cc, z, cc, -sc, z, z, z, z);
    [dx * ry * rz, rx * dy * rz, rx * ry * dz]
}

fn local_transform<T: Real>(rest_joint: &Vector3<T>, angles: &Vector3<T>) -> RigidTransform<T> {
    let r = euler_xyz_matrix(angles);
    RigidTransform {
        rotation: r,
        translation: rest_joint - r * rest_joint,
    }
}

/// World transform per joint: local rotations about rest pivots composed
/// parent to child, with the global translation applied at the root.
pub fn bone_transforms<T: Real>(
    skeleton: &Skeleton<T>,
    pose: &PoseFrame<T>,
) -> Result<Vec<RigidTransform<T>>, SkinningError> {
    let n = skeleton.joint_count();
    if pose.joint_rotations.len() != n {
        return Err(SkinningError::PoseJointMismatch {
            pose: pose.joint_rotations.len(),
            skeleton: n,
        });
    }
    let mut bones = vec![RigidTransform::identity(); n];
    for &j in skeleton.topological_order() {
        let local = local_transform(&skeleton.rest_joints()[j], &pose.joint_rotations[j]);
        bones[j] = match skeleton.parents()[j] {
            Some(p) => bones[p].compose(&local),
            None => RigidTransform {
                rotation: local.rotation,
                translation: local.translation + pose.translation,
            },
        };
    }
    Ok(bones)
}

/// Blends bone transforms per vertex: `sum_i w_i * (B_i v)`.
pub fn skin_vertices<T: Real>(
    positions: &[Vector3<T>],
    weights: &SkinWeights<T>,
    bones: &[RigidTransform<T>],
) -> Result<Vec<Vector3<T>>, SkinningError> {
    if positions.len() != weights.rows.len() {
        return Err(SkinningError::VertexCountMismatch {
            positions: positions.len(),
            rows: weights.rows.len(),
        });
    }
    let mut out = Vec::with_capacity(positions.len());
    for (vi, (p, row)) in positions.iter().zip(&weights.rows).enumerate() {
        let mut sum = T::zero();
        let mut acc = Vector3::zeros();
        for &(j, w) in row {
            sum += w;
            acc += bones[j].apply(p) * w;
        }
        if (sum - T::one()).abs() > T::of(WEIGHT_SUM_TOL_RUNTIME) {
            return Err(SkinningError::InvalidWeights {
                vertex: vi,
                sum: sum.as_f64(),
            });
        }
        out.push(acc);
    }
    Ok(out)
}

/// Accumulated gradient w.r.t. one bone's world transform.
#[derive(Debug, Clone, Copy)]
pub struct BoneGrad<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> BoneGrad<T> {
    pub fn zero() -> Self {
        Self {
            rotation: Matrix3::zeros(),
            translation: Vector3::zeros(),
        }
    }
}

/// Backward of [`skin_vertices`]: returns gradients w.r.t. the canonical
/// positions plus per-bone world-transform gradients.
pub fn skin_vertices_backward<T: Real>(
    positions: &[Vector3<T>],
    weights: &SkinWeights<T>,
    bones: &[RigidTransform<T>],
    g_posed: &[Vector3<T>],
) -> (Vec<Vector3<T>>, Vec<BoneGrad<T>>) {
    let mut g_positions = vec![Vector3::zeros(); positions.len()];
    let mut g_bones = vec![BoneGrad::zero(); bones.len()];
    for ((p, row), (gp_out, g)) in positions
        .iter()
        .zip(&weights.rows)
        .zip(g_positions.iter_mut().zip(g_posed))
    {
        for &(j, w) in row {
            *gp_out += bones[j].rotation.transpose() * g * w;
            g_bones[j].rotation += g * p.transpose() * w;
            g_bones[j].translation += g * w;
        }
    }
    (g_positions, g_bones)
}

/// Gradients of the pose parameters and rest joints produced by the forward
/// kinematics backward pass.
#[derive(Debug, Clone)]
pub struct FkGrads<T: Real> {
    pub rest_joints: Vec<Vector3<T>>,
    pub joint_rotations: Vec<Vector3<T>>,
    pub translation: Vector3<T>,
}

/// Backward of [`bone_transforms`]: pushes world-transform gradients down to
/// rest joints, Euler angles and the global translation.
pub fn bone_transforms_backward<T: Real>(
    skeleton: &Skeleton<T>,
    pose: &PoseFrame<T>,
    g_bones: &[BoneGrad<T>],
) -> Result<FkGrads<T>, SkinningError> {
    let n = skeleton.joint_count();
    if pose.joint_rotations.len() != n || g_bones.len() != n {
        return Err(SkinningError::PoseJointMismatch {
            pose: pose.joint_rotations.len(),
            skeleton: n,
        });
    }
    let bones = bone_transforms(skeleton, pose)?;
    let mut acc: Vec<BoneGrad<T>> = g_bones.to_vec();
    let mut grads = FkGrads {
        rest_joints: vec![Vector3::zeros(); n],
        joint_rotations: vec![Vector3::zeros(); n],
        translation: Vector3::zeros(),
    };
    for &j in skeleton.topological_order().iter().rev() {
        let pivot = skeleton.rest_joints()[j];
        let local = local_transform(&pivot, &pose.joint_rotations[j]);
        let parent_rot = match skeleton.parents()[j] {
            Some(p) => bones[p].rotation,
            None => Matrix3::identity(),
        };
        let g_world = acc[j];

        // World = parent_world * local, with the root's parent being the pure
        // global translation.
        match skeleton.parents()[j] {
            Some(p) => {
                acc[p].rotation += g_world.rotation * local.rotation.transpose()
                    + g_world.translation * local.translation.transpose();
                acc[p].translation += g_world.translation;
            }
            None => grads.translation += g_world.translation,
        }

        // Local rotation appears in the world rotation and, through the pivot
        // term `p - R p`, in the world translation.
        let u = parent_rot.transpose() * g_world.translation;
        let g_local_rot = parent_rot.transpose() * g_world.rotation - u * pivot.transpose();
        grads.rest_joints[j] += u - local.rotation.transpose() * u;

        let partials = euler_xyz_matrix_partials(&pose.joint_rotations[j]);
        for (k, dr) in partials.iter().enumerate() {
            grads.joint_rotations[j][k] = g_local_rot.component_mul(dr).sum();
        }
    }
    Ok(grads)
}
