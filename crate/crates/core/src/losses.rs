//! Training objectives with analytic gradients: the L1 + D-SSIM photometric
//! loss, the same form applied to normal maps remapped to [0,1], and the
//! normal-consistency regularizer over adjacent face pairs.
//!
//! SSIM uses the reference 11x11 Gaussian window (sigma 1.5) with
//! C1 = 0.01^2, C2 = 0.03^2 on [0,1] images, computed per channel and
//! averaged. Convolutions are zero-padded 'same'; at image equality every
//! border term cancels and SSIM is exactly 1 regardless of padding. When a
//! mask is supplied, the L1 mean and the SSIM map mean run over masked pixels
//! only (map values near the mask border still read neighboring unmasked
//! pixels through the window, and those pixels receive gradient).

use crate::geometry::{self, TemplateMesh};
use crate::scalar::Real;
use nalgebra::Vector3;
use thiserror::Error;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4; // (0.01)^2
pub const SSIM_C2: f64 = 9e-4; // (0.03)^2

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("image shape mismatch: {expected} pixels expected, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Mixing weights. Defaults: lambda 0.2, photo 1, normal 1,
/// normal-consistency 0.01.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T: Real> {
    pub lambda: T,
    pub w_photo: T,
    pub w_normal: T,
    pub w_nc: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda: T::of(0.2),
            w_photo: T::one(),
            w_normal: T::one(),
            w_nc: T::of(0.01),
        }
    }
}

/// Value and gradient of one photometric term.
#[derive(Debug, Clone)]
pub struct PhotoLoss<T: Real> {
    pub total: T,
    pub l1: T,
    pub dssim: T,
    /// Gradient of `total` w.r.t. the predicted image.
    pub grad: Vec<Vector3<T>>,
}

fn check_shapes<T: Real>(
    pred: &[Vector3<T>],
    target: &[Vector3<T>],
    width: usize,
    height: usize,
) -> Result<(), LossError> {
    let n = width * height;
    if pred.len() != n {
        return Err(LossError::ShapeMismatch {
            expected: n,
            got: pred.len(),
        });
    }
    if target.len() != n {
        return Err(LossError::ShapeMismatch {
            expected: n,
            got: target.len(),
        });
    }
    Ok(())
}

fn ssim_kernel<T: Real>() -> [T; SSIM_WINDOW] {
    let mut k = [T::zero(); SSIM_WINDOW];
    let sigma = T::of(SSIM_SIGMA);
    let mut sum = T::zero();
    for (i, v) in k.iter_mut().enumerate() {
        let d = T::of_usize(i) - T::of_usize(SSIM_WINDOW / 2);
        *v = (-(d * d) / (T::of(2.0) * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable zero-padded 'same' convolution with a symmetric kernel. The
/// kernel is its own adjoint under this padding, which the backward pass
/// relies on.
fn conv_same<T: Real>(plane: &[T], width: usize, height: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let half = SSIM_WINDOW / 2;
    let mut horiz = vec![T::zero(); plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                let xi = x as isize + i as isize - half as isize;
                if xi >= 0 && (xi as usize) < width {
                    acc += kv * plane[y * width + xi as usize];
                }
            }
            horiz[y * width + x] = acc;
        }
    }
    let mut out = vec![T::zero(); plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                let yi = y as isize + i as isize - half as isize;
                if yi >= 0 && (yi as usize) < height {
                    acc += kv * horiz[yi as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

struct SsimChannel<T: Real> {
    map: Vec<T>,
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    sigma_xx: Vec<T>,
    sigma_yy: Vec<T>,
    sigma_xy: Vec<T>,
}

fn ssim_channel<T: Real>(
    x: &[T],
    y: &[T],
    width: usize,
    height: usize,
    k: &[T; SSIM_WINDOW],
) -> SsimChannel<T> {
    let n = x.len();
    let mu_x = conv_same(x, width, height, k);
    let mu_y = conv_same(y, width, height, k);
    let xx: Vec<T> = (0..n).map(|i| x[i] * x[i]).collect();
    let yy: Vec<T> = (0..n).map(|i| y[i] * y[i]).collect();
    let xy: Vec<T> = (0..n).map(|i| x[i] * y[i]).collect();
    let mut sigma_xx = conv_same(&xx, width, height, k);
    let mut sigma_yy = conv_same(&yy, width, height, k);
    let mut sigma_xy = conv_same(&xy, width, height, k);
    let (c1, c2) = (T::of(SSIM_C1), T::of(SSIM_C2));
    let mut map = vec![T::zero(); n];
    for i in 0..n {
        sigma_xx[i] -= mu_x[i] * mu_x[i];
        sigma_yy[i] -= mu_y[i] * mu_y[i];
        sigma_xy[i] -= mu_x[i] * mu_y[i];
        let a1 = T::of(2.0) * mu_x[i] * mu_y[i] + c1;
        let a2 = T::of(2.0) * sigma_xy[i] + c2;
        let b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1;
        let b2 = sigma_xx[i] + sigma_yy[i] + c2;
        map[i] = a1 * a2 / (b1 * b2);
    }
    SsimChannel {
        map,
        mu_x,
        mu_y,
        sigma_xx,
        sigma_yy,
        sigma_xy,
    }
}

fn masked_count<T: Real>(n: usize, mask: Option<&[bool]>) -> T {
    match mask {
        None => T::of_usize(n),
        Some(m) => T::of_usize(m.iter().filter(|&&b| b).count()),
    }
}

fn in_mask(mask: Option<&[bool]>, i: usize) -> bool {
    mask.map(|m| m[i]).unwrap_or(true)
}

/// Mean SSIM over (masked) pixels, channels averaged. Shared by the loss and
/// the evaluation metrics so the two report exactly the same number.
pub fn ssim_value<T: Real>(
    pred: &[Vector3<T>],
    target: &[Vector3<T>],
    width: usize,
    height: usize,
    mask: Option<&[bool]>,
) -> Result<T, LossError> {
    check_shapes(pred, target, width, height)?;
    let n = pred.len();
    let m = masked_count::<T>(n, mask);
    if m == T::zero() {
        return Ok(T::one());
    }
    let k = ssim_kernel::<T>();
    let mut acc = T::zero();
    for c in 0..3 {
        let x: Vec<T> = pred.iter().map(|p| p[c]).collect();
        let y: Vec<T> = target.iter().map(|p| p[c]).collect();
        let ch = ssim_channel(&x, &y, width, height, &k);
        for i in 0..n {
            if in_mask(mask, i) {
                acc += ch.map[i];
            }
        }
    }
    Ok(acc / (m * T::of(3.0)))
}

/// `(1 - lambda) L1 + lambda (1 - SSIM) / 2` with the gradient w.r.t. `pred`.
pub fn l1_dssim<T: Real>(
    pred: &[Vector3<T>],
    target: &[Vector3<T>],
    width: usize,
    height: usize,
    lambda: T,
    mask: Option<&[bool]>,
) -> Result<PhotoLoss<T>, LossError> {
    check_shapes(pred, target, width, height)?;
    let n = pred.len();
    let m = masked_count::<T>(n, mask);
    if m == T::zero() {
        return Ok(PhotoLoss {
            total: T::zero(),
            l1: T::zero(),
            dssim: T::zero(),
            grad: vec![Vector3::zeros(); n],
        });
    }
    let mut grad = vec![Vector3::zeros(); n];

    let denom = m * T::of(3.0);
    let mut l1 = T::zero();
    for i in 0..n {
        if !in_mask(mask, i) {
            continue;
        }
        for c in 0..3 {
            let d = pred[i][c] - target[i][c];
            l1 += d.abs();
            let sign = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            grad[i][c] += (T::one() - lambda) * sign / denom;
        }
    }
    l1 /= denom;

    let k = ssim_kernel::<T>();
    let (c1, c2) = (T::of(SSIM_C1), T::of(SSIM_C2));
    let mut ssim_acc = T::zero();
    // d total / d ssim = -lambda / 2; each masked map entry carries 1/denom.
    let w_map = -lambda / (T::of(2.0) * denom);
    for c in 0..3 {
        let x: Vec<T> = pred.iter().map(|p| p[c]).collect();
        let y: Vec<T> = target.iter().map(|p| p[c]).collect();
        let ch = ssim_channel(&x, &y, width, height, &k);
        let mut q_conv = vec![T::zero(); n];
        let mut q_xx = vec![T::zero(); n];
        let mut q_xy = vec![T::zero(); n];
        for i in 0..n {
            if !in_mask(mask, i) {
                continue;
            }
            ssim_acc += ch.map[i];
            let a1 = T::of(2.0) * ch.mu_x[i] * ch.mu_y[i] + c1;
            let a2 = T::of(2.0) * ch.sigma_xy[i] + c2;
            let b1 = ch.mu_x[i] * ch.mu_x[i] + ch.mu_y[i] * ch.mu_y[i] + c1;
            let b2 = ch.sigma_xx[i] + ch.sigma_yy[i] + c2;
            let s = ch.map[i];
            let ds_dmux =
                T::of(2.0) * ch.mu_y[i] * a2 / (b1 * b2) - s * T::of(2.0) * ch.mu_x[i] / b1;
            let ds_dsxx = -s / b2;
            let ds_dsxy = T::of(2.0) * a1 / (b1 * b2);
            // mu_x = K*x; sigma_xx = K*(x^2) - mu_x^2; sigma_xy = K*(xy) - mu_x mu_y.
            q_conv[i] =
                w_map * (ds_dmux - T::of(2.0) * ch.mu_x[i] * ds_dsxx - ch.mu_y[i] * ds_dsxy);
            q_xx[i] = w_map * ds_dsxx;
            q_xy[i] = w_map * ds_dsxy;
        }
        let conv_q = conv_same(&q_conv, width, height, &k);
        let conv_xx = conv_same(&q_xx, width, height, &k);
        let conv_xy = conv_same(&q_xy, width, height, &k);
        for i in 0..n {
            grad[i][c] += conv_q[i] + T::of(2.0) * x[i] * conv_xx[i] + y[i] * conv_xy[i];
        }
    }
    let ssim = ssim_acc / denom;
    let dssim = (T::one() - ssim) * T::of(0.5);
    Ok(PhotoLoss {
        total: (T::one() - lambda) * l1 + lambda * dssim,
        l1,
        dssim,
        grad,
    })
}

/// Photometric form applied to signed normal images: both are mapped through
/// `(n + 1) / 2` first and the gradient is chained back to the signed input.
pub fn normal_loss<T: Real>(
    pred_normal: &[Vector3<T>],
    target_normal: &[Vector3<T>],
    width: usize,
    height: usize,
    lambda: T,
    mask: Option<&[bool]>,
) -> Result<PhotoLoss<T>, LossError> {
    let half = T::of(0.5);
    let map = |img: &[Vector3<T>]| -> Vec<Vector3<T>> {
        img.iter()
            .map(|n| (n + Vector3::repeat(T::one())) * half)
            .collect()
    };
    let mut out = l1_dssim(
        &map(pred_normal),
        &map(target_normal),
        width,
        height,
        lambda,
        mask,
    )?;
    for g in &mut out.grad {
        *g *= half;
    }
    Ok(out)
}

/// Mean of `1 - n_i . n_j` over edge-adjacent face pairs, with the gradient
/// w.r.t. the posed vertices. Pairs touching a degenerate face are skipped.
pub fn normal_consistency<T: Real>(
    posed_vertices: &[Vector3<T>],
    mesh: &TemplateMesh<T>,
    adjacency: &[(usize, usize)],
) -> (T, Vec<Vector3<T>>) {
    let mut grad = vec![Vector3::zeros(); posed_vertices.len()];
    let normals: Vec<Option<Vector3<T>>> = (0..mesh.face_count())
        .map(|f| mesh.face_normal(posed_vertices, f).ok())
        .collect();
    let mut value = T::zero();
    let mut pairs = 0usize;
    for &(i, j) in adjacency {
        if let (Some(ni), Some(nj)) = (&normals[i], &normals[j]) {
            value += T::one() - ni.dot(nj);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return (T::zero(), grad);
    }
    let inv = T::one() / T::of_usize(pairs);
    value *= inv;
    for &(i, j) in adjacency {
        let (Some(ni), Some(nj)) = (&normals[i], &normals[j]) else {
            continue;
        };
        // d/dn_i (1 - n_i . n_j) / pairs
        for (face, g_n) in [(i, -nj * inv), (j, -ni * inv)] {
            let [a, b, c] = mesh.faces()[face];
            if let Some([ga, gb, gc]) = geometry::face_normal_backward(
                posed_vertices[a],
                posed_vertices[b],
                posed_vertices[c],
                g_n,
            ) {
                grad[a] += ga;
                grad[b] += gb;
                grad[c] += gc;
            }
        }
    }
    (value, grad)
}

/// Weighted total objective and routed gradients.
#[derive(Debug, Clone)]
pub struct TotalLoss<T: Real> {
    pub total: T,
    pub rgb: T,
    pub normal: T,
    pub nc: T,
    pub grad_color: Vec<Vector3<T>>,
    pub grad_normal: Vec<Vector3<T>>,
    pub grad_vertices: Vec<Vector3<T>>,
}

/// `w_photo * l1_dssim(color) + w_normal * normal_loss + w_nc * consistency`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    pred_color: &[Vector3<T>],
    gt_color: &[Vector3<T>],
    pred_normal: &[Vector3<T>],
    gt_normal: &[Vector3<T>],
    width: usize,
    height: usize,
    posed_vertices: &[Vector3<T>],
    mesh: &TemplateMesh<T>,
    adjacency: &[(usize, usize)],
    weights: &LossWeights<T>,
    mask: Option<&[bool]>,
) -> Result<TotalLoss<T>, LossError> {
    let photo = l1_dssim(pred_color, gt_color, width, height, weights.lambda, mask)?;
    let normal = normal_loss(pred_normal, gt_normal, width, height, weights.lambda, mask)?;
    let (nc, nc_grad) = normal_consistency(posed_vertices, mesh, adjacency);
    let mut grad_color = photo.grad;
    for g in &mut grad_color {
        *g *= weights.w_photo;
    }
    let mut grad_normal = normal.grad;
    for g in &mut grad_normal {
        *g *= weights.w_normal;
    }
    let mut grad_vertices = nc_grad;
    for g in &mut grad_vertices {
        *g *= weights.w_nc;
    }
    Ok(TotalLoss {
        total: weights.w_photo * photo.total + weights.w_normal * normal.total + weights.w_nc * nc,
        rgb: photo.total,
        normal: normal.total,
        nc,
        grad_color,
        grad_normal,
        grad_vertices,
    })
}
