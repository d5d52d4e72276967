//! Adam, the three-stage learning-rate schedule, gradient clipping, and the
//! per-frame training loop (with optional per-frame pose refinement).
//!
//! Trainable groups: per-face log scales, the displacement field, the color
//! field, skeleton rest joints (frozen in the final stage) and per-frame
//! poses (when refinement is on). Opacity, in-plane rotations and skin
//! weights are never optimized. One optimizer step per frame, frames in
//! dataset order; divergence (a non-finite loss or gradient) aborts the
//! epoch with an error naming the group so the caller can fall back to its
//! last snapshot.

use crate::losses::{self, LossError, LossWeights};
use crate::model::{BoundSplatModel, ModelError, ParamGradients};
use crate::scalar::Real;
use crate::skinning::PoseFrame;
use crate::splatting::{Camera, RasterConfig};
use nalgebra::{Vector2, Vector3};
use thiserror::Error;

/// Global-norm clip applied to every group's gradient before Adam.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epoch {epoch} outside schedule 1..={max}")]
    EpochOutOfRange { epoch: usize, max: usize },
    #[error("group '{group}' diverged: non-finite {what}")]
    Diverged { group: String, what: String },
    #[error("optimizer state for '{group}' holds {state} values, parameters have {params}")]
    StateMismatch {
        group: String,
        state: usize,
        params: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Learning rates active during one epoch. `joints` is `None` in the final
/// stage, where rest joints are frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRates<T: Real> {
    pub stage: usize,
    pub scale: T,
    pub color: T,
    pub displacement: T,
    pub joints: Option<T>,
    pub pose: T,
}

/// Stage 1 covers epochs 1..=4, stage 2 covers 5..=10, stage 3 the rest up
/// to `max_epoch`. Scales train at 5e-3 and the color field at 5e-4
/// throughout; the displacement field runs 1e-4, 8e-4, 1e-4 across stages;
/// joints train at 5e-4 until the final stage; pose refinement uses 1e-4.
pub fn stage_of<T: Real>(epoch: usize, max_epoch: usize) -> Result<StageRates<T>, TrainError> {
    if epoch == 0 || epoch > max_epoch {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            max: max_epoch,
        });
    }
    let (stage, displacement, joints) = match epoch {
        1..=4 => (1, T::of(1e-4), Some(T::of(5e-4))),
        5..=10 => (2, T::of(8e-4), Some(T::of(5e-4))),
        _ => (3, T::of(1e-4), None),
    };
    Ok(StageRates {
        stage,
        scale: T::of(5e-3),
        color: T::of(5e-4),
        displacement,
        joints,
        pose: T::of(1e-4),
    })
}

/// Bias-corrected Adam over a logically flat parameter vector that may be
/// presented as chunks.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update over chunked parameters and matching gradient chunks.
    /// Errors if any gradient is non-finite or the lengths disagree.
    pub fn step_chunks(
        &mut self,
        lr: T,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        group: &str,
    ) -> Result<(), TrainError> {
        let total: usize = grads.iter().map(|g| g.len()).sum();
        let param_total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.m.len() || param_total != self.m.len() {
            return Err(TrainError::StateMismatch {
                group: group.to_string(),
                state: self.m.len(),
                params: param_total,
            });
        }
        for g in grads {
            for x in g.iter() {
                if !x.is_finite() {
                    return Err(TrainError::Diverged {
                        group: group.to_string(),
                        what: "gradient".to_string(),
                    });
                }
            }
        }
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t as i32);
        let bc2 = T::one() - self.beta2.powi(self.t as i32);
        let mut offset = 0usize;
        for (p_chunk, g_chunk) in params.iter_mut().zip(grads) {
            for (p, &g) in p_chunk.iter_mut().zip(g_chunk.iter()) {
                let m = &mut self.m[offset];
                let v = &mut self.v[offset];
                *m = self.beta1 * *m + (T::one() - self.beta1) * g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Scales gradient chunks so their joint L2 norm is at most `max_norm`.
pub fn clip_chunks<T: Real>(chunks: &mut [&mut [T]], max_norm: T) {
    let mut norm_sq = T::zero();
    for c in chunks.iter() {
        for &g in c.iter() {
            norm_sq += g * g;
        }
    }
    let norm = norm_sq.sqrt();
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        for c in chunks.iter_mut() {
            for g in c.iter_mut() {
                *g *= s;
            }
        }
    }
}

/// One training view: target images, mask, camera and the pose estimate
/// (refined in place when pose refinement is enabled).
#[derive(Debug, Clone)]
pub struct FrameData<T: Real> {
    pub camera: Camera<T>,
    pub pose: PoseFrame<T>,
    pub color: Vec<Vector3<T>>,
    pub normal: Option<Vec<Vector3<T>>>,
    pub mask: Option<Vec<bool>>,
}

/// One CSV row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow<T: Real> {
    pub epoch: usize,
    pub iter: usize,
    pub rgb: T,
    pub normal: T,
    pub nc: T,
    pub total: T,
}

#[derive(Debug, Clone)]
pub struct EpochStats<T: Real> {
    pub rows: Vec<LossRow<T>>,
    pub mean_total: T,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub max_epoch: usize,
    pub refine_pose: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epoch: 20,
            refine_pose: false,
        }
    }
}

fn flat2<T: Real>(v: &[Vector2<T>]) -> Vec<T> {
    v.iter().flat_map(|x| [x.x, x.y]).collect()
}

fn flat3<T: Real>(v: &[Vector3<T>]) -> Vec<T> {
    v.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
}

fn unflat2<T: Real>(flat: &[T], out: &mut [Vector2<T>]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = Vector2::new(flat[2 * i], flat[2 * i + 1]);
    }
}

fn unflat3<T: Real>(flat: &[T], out: &mut [Vector3<T>]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    }
}

/// Drives epochs over a dataset: per frame, forward render, losses, full
/// backward, clipped Adam step per active group.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    pub model: BoundSplatModel<T>,
    pub raster: RasterConfig<T>,
    pub weights: LossWeights<T>,
    pub options: TrainOptions,
    adam_scales: Adam<T>,
    adam_displacement: Adam<T>,
    adam_color: Adam<T>,
    adam_joints: Adam<T>,
    adam_poses: Vec<Adam<T>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(
        model: BoundSplatModel<T>,
        raster: RasterConfig<T>,
        weights: LossWeights<T>,
        options: TrainOptions,
    ) -> Self {
        let n_faces = model.face_count();
        let n_joints = model.skeleton().joint_count();
        let disp_len = model.displacement.param_count();
        let color_len = model.color.param_count();
        Self {
            model,
            raster,
            weights,
            options,
            adam_scales: Adam::new(2 * n_faces),
            adam_displacement: Adam::new(disp_len),
            adam_color: Adam::new(color_len),
            adam_joints: Adam::new(3 * n_joints),
            adam_poses: Vec::new(),
        }
    }

    fn ensure_pose_states(&mut self, n_frames: usize) {
        let n_joints = self.model.skeleton().joint_count();
        while self.adam_poses.len() < n_frames {
            self.adam_poses.push(Adam::new(3 * n_joints + 3));
        }
    }

    /// Forward, loss, backward for one frame. Returns the loss components
    /// and the parameter gradients.
    fn frame_gradients(
        &self,
        frame: &FrameData<T>,
    ) -> Result<(LossRow<T>, ParamGradients<T>), TrainError> {
        let fwd = self
            .model
            .forward_frame(&frame.camera, &frame.pose, &self.raster)?;
        let (w, h) = (frame.camera.width, frame.camera.height);
        let mask = frame.mask.as_deref();
        let photo = losses::l1_dssim(
            &fwd.image.color,
            &frame.color,
            w,
            h,
            self.weights.lambda,
            mask,
        )?;
        let (normal_total, g_normal) = match &frame.normal {
            Some(target) => {
                let out = losses::normal_loss(
                    &fwd.image.normal,
                    target,
                    w,
                    h,
                    self.weights.lambda,
                    mask,
                )?;
                (out.total, out.grad)
            }
            None => (T::zero(), vec![Vector3::zeros(); w * h]),
        };
        let (nc, nc_grad) = losses::normal_consistency(
            &fwd.posed_vertices,
            self.model.mesh(),
            self.model.adjacency(),
        );
        let total = self.weights.w_photo * photo.total
            + self.weights.w_normal * normal_total
            + self.weights.w_nc * nc;
        if !total.is_finite() {
            return Err(TrainError::Diverged {
                group: "loss".to_string(),
                what: "loss".to_string(),
            });
        }
        let g_color: Vec<Vector3<T>> = photo
            .grad
            .iter()
            .map(|g| g * self.weights.w_photo)
            .collect();
        let g_normal: Vec<Vector3<T>> =
            g_normal.iter().map(|g| g * self.weights.w_normal).collect();
        let g_verts: Vec<Vector3<T>> = nc_grad.iter().map(|g| g * self.weights.w_nc).collect();
        let grads = self.model.backward_frame(
            &frame.camera,
            &frame.pose,
            &fwd,
            &self.raster,
            &g_color,
            &g_normal,
            &g_verts,
        )?;
        let row = LossRow {
            epoch: 0,
            iter: 0,
            rgb: photo.total,
            normal: normal_total,
            nc,
            total,
        };
        Ok((row, grads))
    }

    fn apply_model_updates(
        &mut self,
        rates: &StageRates<T>,
        grads: &mut ParamGradients<T>,
    ) -> Result<(), TrainError> {
        let clip = T::of(GRAD_CLIP_NORM);

        let mut g_scales = flat2(&grads.log_scales);
        clip_chunks(&mut [&mut g_scales], clip);
        let mut p_scales = flat2(&self.model.log_scales);
        self.adam_scales
            .step_chunks(rates.scale, &mut [&mut p_scales], &[&g_scales], "scales")?;
        unflat2(&p_scales, &mut self.model.log_scales);

        {
            let mut g_chunks = grads.displacement.chunks_mut();
            clip_chunks(&mut g_chunks, clip);
            let g_chunks: Vec<&[T]> = grads.displacement.chunks().into_iter().collect();
            let mut p_chunks = self.model.displacement.param_chunks_mut();
            self.adam_displacement.step_chunks(
                rates.displacement,
                &mut p_chunks,
                &g_chunks,
                "displacement",
            )?;
        }
        {
            let mut g_chunks = grads.color.chunks_mut();
            clip_chunks(&mut g_chunks, clip);
            let g_chunks: Vec<&[T]> = grads.color.chunks().into_iter().collect();
            let mut p_chunks = self.model.color.param_chunks_mut();
            self.adam_color
                .step_chunks(rates.color, &mut p_chunks, &g_chunks, "color")?;
        }

        if let Some(lr) = rates.joints {
            let mut g_joints = flat3(&grads.rest_joints);
            clip_chunks(&mut [&mut g_joints], clip);
            let mut p_joints = flat3(self.model.skeleton().rest_joints());
            self.adam_joints
                .step_chunks(lr, &mut [&mut p_joints], &[&g_joints], "joints")?;
            unflat3(&p_joints, self.model.skeleton_mut().rest_joints_mut());
        }
        Ok(())
    }

    fn apply_pose_update(
        &mut self,
        frame_idx: usize,
        frame: &mut FrameData<T>,
        lr: T,
        grads: &ParamGradients<T>,
    ) -> Result<(), TrainError> {
        self.ensure_pose_states(frame_idx + 1);
        let clip = T::of(GRAD_CLIP_NORM);
        let mut g: Vec<T> = flat3(&grads.pose_rotations);
        g.extend_from_slice(&flat3(&[grads.pose_translation]));
        clip_chunks(&mut [&mut g], clip);
        let mut p: Vec<T> = flat3(&frame.pose.joint_rotations);
        p.extend_from_slice(&flat3(&[frame.pose.translation]));
        self.adam_poses[frame_idx].step_chunks(lr, &mut [&mut p], &[&g], "pose")?;
        let n = frame.pose.joint_rotations.len();
        unflat3(&p[..3 * n], &mut frame.pose.joint_rotations);
        frame.pose.translation = Vector3::new(p[3 * n], p[3 * n + 1], p[3 * n + 2]);
        Ok(())
    }

    /// Runs one epoch over the dataset in order. Returns per-iteration loss
    /// rows; frames' poses are updated in place when refinement is on.
    pub fn train_epoch(
        &mut self,
        frames: &mut [FrameData<T>],
        epoch: usize,
    ) -> Result<EpochStats<T>, TrainError> {
        if frames.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let rates = stage_of::<T>(epoch, self.options.max_epoch)?;
        if self.options.refine_pose {
            self.ensure_pose_states(frames.len());
        }
        let mut rows = Vec::with_capacity(frames.len());
        let mut sum_total = T::zero();
        for (i, frame) in frames.iter_mut().enumerate() {
            let (mut row, mut grads) = self.frame_gradients(frame)?;
            row.epoch = epoch;
            row.iter = i;
            self.apply_model_updates(&rates, &mut grads)?;
            if self.options.refine_pose {
                self.apply_pose_update(i, frame, rates.pose, &grads)?;
            }
            sum_total += row.total;
            rows.push(row);
        }
        Ok(EpochStats {
            mean_total: sum_total / T::of_usize(rows.len()),
            rows,
        })
    }

    /// One pose-refinement step for a single frame: total loss, gradients
    /// w.r.t. that frame's pose only, one Adam step at the shared 1e-4 rate.
    /// Model parameters are untouched. Returns the loss before the step.
    pub fn refine_pose(
        &mut self,
        frame_idx: usize,
        frame: &mut FrameData<T>,
    ) -> Result<T, TrainError> {
        let (row, grads) = self.frame_gradients(frame)?;
        self.apply_pose_update(frame_idx, frame, T::of(1e-4), &grads)?;
        Ok(row.total)
    }
}
