//! Perspective projection and differentiable alpha compositing of 3D
//! Gaussians on the CPU.
//!
//! The compositing contract: splats are depth-sorted front to back (ties
//! broken by id); a splat touches a pixel iff the pixel center lies within
//! its screen radius (3 sigma of the dilated 2D covariance); contributions
//! are `c * alpha_hat * T` with `alpha_hat = min(opacity * G, 0.99)` and
//! transmittance `T` multiplied by `1 - alpha_hat` per splat, stopping once
//! `T < 1e-4`; the background receives the final transmittance. The 16x16
//! tiling is a traversal optimization only; [`composite_reference`] walks
//! every splat per pixel under the same contract and must agree bitwise.
//!
//! The normal pass reuses the same weights: per-splat payloads are unit face
//! normals carried through a degree-0 spherical-harmonic encode/decode pair
//! that round-trips exactly, composited over a signed zero background.

use crate::scalar::Real;
use crate::skinning::RigidTransform;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplatError {
    #[error("camera intrinsics must be positive (fx {fx}, fy {fy})")]
    BadIntrinsics { fx: f64, fy: f64 },
    #[error("camera image size must be nonzero")]
    EmptyImage,
    #[error("camera rotation is not orthonormal (error {error})")]
    NonRigidCamera { error: f64 },
    #[error("gradient image has {got} pixels, expected {expected}")]
    GradientSizeMismatch { expected: usize, got: usize },
}

/// Pinhole camera: a world-to-camera rigid transform plus intrinsics.
/// Camera space looks down +z; a point projects to
/// `(fx x / z + cx, fy y / z + cy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real> {
    pub world_to_camera: RigidTransform<T>,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    pub fn validate(&self) -> Result<(), SplatError> {
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(SplatError::BadIntrinsics {
                fx: self.fx.as_f64(),
                fy: self.fy.as_f64(),
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(SplatError::EmptyImage);
        }
        let err = self.world_to_camera.rigidity_error();
        if err > T::of(1e-6) {
            return Err(SplatError::NonRigidCamera {
                error: err.as_f64(),
            });
        }
        Ok(())
    }
}

/// Compositing constants. Defaults: 0.01 near plane, 0.3 px^2 dilation,
/// 0.99 alpha cap, 1e-4 transmittance stop, 16 px tiles, black background,
/// signed-zero normal background.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterConfig<T: Real> {
    pub near: T,
    pub dilation: T,
    pub alpha_cap: T,
    pub transmittance_floor: T,
    pub tile: usize,
    pub background: Vector3<T>,
    pub normal_background: Vector3<T>,
}

impl<T: Real> Default for RasterConfig<T> {
    fn default() -> Self {
        Self {
            near: T::of(0.01),
            dilation: T::of(0.3),
            alpha_cap: T::of(0.99),
            transmittance_floor: T::of(1e-4),
            tile: 16,
            background: Vector3::zeros(),
            normal_background: Vector3::zeros(),
        }
    }
}

/// A projected splat ready for compositing. `color` is the blended payload of
/// the color pass and `normal` of the normal pass; `splat_id` indexes the
/// gradient buffers and breaks depth ties.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatScreen<T: Real> {
    pub mean2d: Vector2<T>,
    pub cov2d: Matrix2<T>,
    pub depth: T,
    pub radius: T,
    pub color: Vector3<T>,
    pub normal: Vector3<T>,
    pub opacity: T,
    pub splat_id: usize,
}

/// Color, normal and alpha planes of one render, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<T: Real> {
    width: usize,
    height: usize,
    pub color: Vec<Vector3<T>>,
    pub normal: Vec<Vector3<T>>,
    pub alpha: Vec<T>,
}

impl<T: Real> ImagePlane<T> {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![Vector3::zeros(); n],
            normal: vec![Vector3::zeros(); n],
            alpha: vec![T::zero(); n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Degree-0 SH coefficient of a normal: `n / sqrt(4 pi)`.
pub fn normal_to_sh<T: Real>(n: &Vector3<T>) -> Vector3<T> {
    *n / (T::of(4.0) * T::pi()).sqrt()
}

/// Inverse of [`normal_to_sh`]; the pair round-trips exactly, so rendered
/// normal payloads are the signed components themselves.
pub fn sh_to_normal<T: Real>(coeff: &Vector3<T>) -> Vector3<T> {
    *coeff * (T::of(4.0) * T::pi()).sqrt()
}

/// Unnormalized Gaussian weight at a pixel center. A singular covariance is
/// regularized by the standard 0.3 px^2 diagonal dilation instead of failing.
pub fn eval_gaussian2d<T: Real>(mean2d: &Vector2<T>, cov2d: &Matrix2<T>, pixel: &Vector2<T>) -> T {
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    let (a, b, c, det) = if det <= T::zero() {
        let reg = T::of(0.3);
        let (a, c) = (a + reg, c + reg);
        (a, b, c, a * c - b * b)
    } else {
        (a, b, c, det)
    };
    let d = pixel - mean2d;
    let q = (c * d.x * d.x - T::of(2.0) * b * d.x * d.y + a * d.y * d.y) / det;
    (-q * T::of(0.5)).exp()
}

fn cov2d_inverse<T: Real>(cov2d: &Matrix2<T>) -> Matrix2<T> {
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    let (a, b, c, det) = if det <= T::zero() {
        let reg = T::of(0.3);
        let (a, c) = (a + reg, c + reg);
        (a, b, c, a * c - b * b)
    } else {
        (a, b, c, det)
    };
    Matrix2::new(c, -b, -b, a) / det
}

fn perspective_jacobian<T: Real>(cam: &Camera<T>, p: &Vector3<T>) -> nalgebra::Matrix2x3<T> {
    let z = p.z;
    let z2 = z * z;
    nalgebra::Matrix2x3::new(
        cam.fx / z,
        T::zero(),
        -cam.fx * p.x / z2,
        T::zero(),
        cam.fy / z,
        -cam.fy * p.y / z2,
    )
}

/// Projects a world-space Gaussian; `None` when the center is at or behind
/// the near plane.
pub fn project_splat<T: Real>(
    center3d: &Vector3<T>,
    cov3d: &Matrix3<T>,
    camera: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> Option<SplatScreen<T>> {
    let p = camera.world_to_camera.apply(center3d);
    if p.z <= cfg.near {
        return None;
    }
    let mean2d = Vector2::new(
        camera.fx * p.x / p.z + camera.cx,
        camera.fy * p.y / p.z + camera.cy,
    );
    let r = camera.world_to_camera.rotation;
    let m = r * cov3d * r.transpose();
    let j = perspective_jacobian(camera, &p);
    let mut cov2d = j * m * j.transpose();
    cov2d[(0, 0)] += cfg.dilation;
    cov2d[(1, 1)] += cfg.dilation;
    // Symmetrize against round-off so downstream math sees b01 == b10.
    let b = (cov2d[(0, 1)] + cov2d[(1, 0)]) * T::of(0.5);
    cov2d[(0, 1)] = b;
    cov2d[(1, 0)] = b;
    let half_tr = (cov2d[(0, 0)] + cov2d[(1, 1)]) * T::of(0.5);
    let half_diff = (cov2d[(0, 0)] - cov2d[(1, 1)]) * T::of(0.5);
    let lambda_max = half_tr + (half_diff * half_diff + b * b).sqrt();
    let radius = T::of(3.0) * lambda_max.max(T::zero()).sqrt();
    Some(SplatScreen {
        mean2d,
        cov2d,
        depth: p.z,
        radius,
        color: Vector3::zeros(),
        normal: Vector3::zeros(),
        opacity: T::one(),
        splat_id: 0,
    })
}

/// Backward of [`project_splat`] for one splat: gradients w.r.t. the world
/// center and world covariance given gradients w.r.t. `mean2d` and `cov2d`.
/// Camera parameters are fixed and receive no gradient.
pub fn project_backward<T: Real>(
    center3d: &Vector3<T>,
    cov3d: &Matrix3<T>,
    camera: &Camera<T>,
    g_mean2d: &Vector2<T>,
    g_cov2d: &Matrix2<T>,
) -> (Vector3<T>, Matrix3<T>) {
    let rot = camera.world_to_camera.rotation;
    let p = camera.world_to_camera.apply(center3d);
    let m = rot * cov3d * rot.transpose();
    let j = perspective_jacobian(camera, &p);

    // cov2d = J M J^T (+ const): gM = J^T Gc J, gJ = (Gc + Gc^T) J M.
    let g_m = j.transpose() * g_cov2d * j;
    let g_j = (g_cov2d + g_cov2d.transpose()) * j * m;

    let (x, y, z) = (p.x, p.y, p.z);
    let z2 = z * z;
    let z3 = z2 * z;
    let two = T::of(2.0);
    let mut g_p = Vector3::zeros();
    // mean2d = (fx x / z + cx, fy y / z + cy)
    g_p.x += g_mean2d.x * camera.fx / z;
    g_p.y += g_mean2d.y * camera.fy / z;
    g_p.z += -g_mean2d.x * camera.fx * x / z2 - g_mean2d.y * camera.fy * y / z2;
    // Nonconstant J entries: J00 = fx/z, J02 = -fx x/z^2, J11 = fy/z, J12 = -fy y/z^2.
    g_p.x += g_j[(0, 2)] * (-camera.fx / z2);
    g_p.y += g_j[(1, 2)] * (-camera.fy / z2);
    g_p.z += g_j[(0, 0)] * (-camera.fx / z2)
        + g_j[(1, 1)] * (-camera.fy / z2)
        + g_j[(0, 2)] * (two * camera.fx * x / z3)
        + g_j[(1, 2)] * (two * camera.fy * y / z3);

    let g_center = rot.transpose() * g_p;
    let g_sigma = rot.transpose() * g_m * rot;
    (g_center, g_sigma)
}

/// Depth sort, front to back, ties broken by `splat_id`. Depths are finite by
/// construction (projection culls at the near plane).
pub fn sort_splats<T: Real>(splats: &mut [SplatScreen<T>]) {
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.splat_id.cmp(&b.splat_id))
    });
}

fn is_sorted<T: Real>(splats: &[SplatScreen<T>]) -> bool {
    splats.windows(2).all(|w| {
        w[0].depth < w[1].depth || (w[0].depth == w[1].depth && w[0].splat_id <= w[1].splat_id)
    })
}

/// Tile lists: for each 16x16 tile, indices into the sorted splat slice whose
/// radius square overlaps the tile, preserving depth order.
fn bin_splats<T: Real>(
    splats: &[SplatScreen<T>],
    tile: usize,
    width: usize,
    height: usize,
) -> (usize, usize, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let min_x = (s.mean2d.x - s.radius).as_f64().floor();
        let max_x = (s.mean2d.x + s.radius).as_f64().ceil();
        let min_y = (s.mean2d.y - s.radius).as_f64().floor();
        let max_y = (s.mean2d.y + s.radius).as_f64().ceil();
        if max_x < 0.0 || max_y < 0.0 || min_x > width as f64 || min_y > height as f64 {
            continue;
        }
        let tx0 = (min_x.max(0.0) as usize) / tile;
        let ty0 = (min_y.max(0.0) as usize) / tile;
        let tx1 = ((max_x.min(width as f64 - 1.0)) as usize) / tile;
        let ty1 = ((max_y.min(height as f64 - 1.0)) as usize) / tile;
        for ty in ty0..=ty1.min(tiles_y - 1) {
            for tx in tx0..=tx1.min(tiles_x - 1) {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    (tiles_x, tiles_y, bins)
}

struct PixelShade<T: Real> {
    color: Vector3<T>,
    normal: Vector3<T>,
    alpha: T,
}

/// One contribution recorded while re-walking a pixel in the backward pass.
struct Contrib<T: Real> {
    sorted_idx: u32,
    weight: T,
    alpha_hat: T,
    capped: bool,
    t_before: T,
}

#[inline]
fn shade_pixel<T: Real, I: Iterator<Item = u32>>(
    order: I,
    splats: &[SplatScreen<T>],
    px: &Vector2<T>,
    cfg: &RasterConfig<T>,
    mut record: Option<&mut Vec<Contrib<T>>>,
) -> PixelShade<T> {
    let mut color = Vector3::zeros();
    let mut normal = Vector3::zeros();
    let mut t = T::one();
    for i in order {
        let s = &splats[i as usize];
        let d = px - s.mean2d;
        if d.norm_squared() > s.radius * s.radius {
            continue;
        }
        let g = eval_gaussian2d(&s.mean2d, &s.cov2d, px);
        let raw = s.opacity * g;
        let capped = raw > cfg.alpha_cap;
        let alpha_hat = if capped { cfg.alpha_cap } else { raw };
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contrib {
                sorted_idx: i,
                weight: g,
                alpha_hat,
                capped,
                t_before: t,
            });
        }
        color += s.color * (alpha_hat * t);
        normal += s.normal * (alpha_hat * t);
        t *= T::one() - alpha_hat;
        if t < cfg.transmittance_floor {
            break;
        }
    }
    color += cfg.background * t;
    normal += cfg.normal_background * t;
    PixelShade {
        color,
        normal,
        alpha: T::one() - t,
    }
}

fn pixel_center<T: Real>(x: usize, y: usize) -> Vector2<T> {
    Vector2::new(T::of_usize(x) + T::of(0.5), T::of_usize(y) + T::of(0.5))
}

fn composite_impl<T: Real>(
    splats: &[SplatScreen<T>],
    cfg: &RasterConfig<T>,
    width: usize,
    height: usize,
) -> ImagePlane<T> {
    debug_assert!(is_sorted(splats), "composite expects depth-sorted splats");
    let (tiles_x, _tiles_y, bins) = bin_splats(splats, cfg.tile, width, height);
    let rows: Vec<Vec<PixelShade<T>>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let ty = y / cfg.tile;
            (0..width)
                .map(|x| {
                    let bin = &bins[ty * tiles_x + x / cfg.tile];
                    shade_pixel(bin.iter().copied(), splats, &pixel_center(x, y), cfg, None)
                })
                .collect()
        })
        .collect();
    let mut out = ImagePlane::new(width, height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            let i = out.index(x, y);
            out.color[i] = px.color;
            out.normal[i] = px.normal;
            out.alpha[i] = px.alpha;
        }
    }
    out
}

/// Front-to-back alpha compositing of sorted splats over the background.
/// Blends color payloads and alpha; the normal plane of the result is the
/// blended `normal` payloads over the signed normal background, produced in
/// the same walk with identical weights.
pub fn composite<T: Real>(
    splats: &[SplatScreen<T>],
    cfg: &RasterConfig<T>,
    width: usize,
    height: usize,
) -> ImagePlane<T> {
    composite_impl(splats, cfg, width, height)
}

/// Untiled reference: every pixel walks every splat in depth order under the
/// same contract. Exists to pin the tiled traversal; intentionally naive.
pub fn composite_reference<T: Real>(
    splats: &[SplatScreen<T>],
    cfg: &RasterConfig<T>,
    width: usize,
    height: usize,
) -> ImagePlane<T> {
    debug_assert!(is_sorted(splats));
    let mut out = ImagePlane::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let shade = shade_pixel(
                0..splats.len() as u32,
                splats,
                &pixel_center(x, y),
                cfg,
                None,
            );
            let i = out.index(x, y);
            out.color[i] = shade.color;
            out.normal[i] = shade.normal;
            out.alpha[i] = shade.alpha;
        }
    }
    out
}

/// Per-splat gradients produced by [`rasterize_backward`], indexed by
/// `splat_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrads<T: Real> {
    pub color: Vector3<T>,
    pub normal: Vector3<T>,
    pub mean2d: Vector2<T>,
    pub cov2d: Matrix2<T>,
    pub opacity: T,
}

impl<T: Real> SplatGrads<T> {
    fn zero() -> Self {
        Self {
            color: Vector3::zeros(),
            normal: Vector3::zeros(),
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::zeros(),
            opacity: T::zero(),
        }
    }
}

/// Per-splat gradients plus the gradients w.r.t. the color and normal
/// backgrounds, in that order.
pub type BackwardOutput<T> = (Vec<SplatGrads<T>>, Vector3<T>, Vector3<T>);

/// Gradients of the compositor inputs given loss gradients w.r.t. the color
/// and (optionally) normal planes. Also returns the gradients w.r.t. the two
/// backgrounds. Pixels re-walk their splats front to back, then unwind in
/// reverse accumulating the standard transmittance-weighted terms; splats cut
/// off by the early stop or the alpha cap receive the matching zero
/// gradients.
pub fn rasterize_backward<T: Real>(
    splats: &[SplatScreen<T>],
    cfg: &RasterConfig<T>,
    n_splats: usize,
    g_color: &[Vector3<T>],
    g_normal: Option<&[Vector3<T>]>,
    width: usize,
    height: usize,
) -> Result<BackwardOutput<T>, SplatError> {
    debug_assert!(is_sorted(splats));
    let n_px = width * height;
    if g_color.len() != n_px {
        return Err(SplatError::GradientSizeMismatch {
            expected: n_px,
            got: g_color.len(),
        });
    }
    if let Some(gn) = g_normal {
        if gn.len() != n_px {
            return Err(SplatError::GradientSizeMismatch {
                expected: n_px,
                got: gn.len(),
            });
        }
    }
    let (tiles_x, _ty, bins) = bin_splats(splats, cfg.tile, width, height);

    // Rows are grouped in fixed-height bands; each band accumulates its own
    // buffers and bands are merged in order, so results do not depend on the
    // thread count.
    const BAND: usize = 16;
    let n_bands = height.div_ceil(BAND);
    struct BandGrads<T: Real> {
        per_splat: Vec<SplatGrads<T>>,
        g_bg: Vector3<T>,
        g_nbg: Vector3<T>,
    }
    let bands: Vec<BandGrads<T>> = (0..n_bands)
        .into_par_iter()
        .map(|band| {
            let y0 = band * BAND;
            let y1 = (y0 + BAND).min(height);
            let mut acc = BandGrads {
                per_splat: vec![SplatGrads::zero(); n_splats],
                g_bg: Vector3::zeros(),
                g_nbg: Vector3::zeros(),
            };
            let mut contribs: Vec<Contrib<T>> = Vec::new();
            for y in y0..y1 {
                let ty = y / cfg.tile;
                for x in 0..width {
                    let px_i = y * width + x;
                    let gc = g_color[px_i];
                    let gn = g_normal.map(|g| g[px_i]).unwrap_or_else(Vector3::zeros);
                    if gc == Vector3::zeros() && gn == Vector3::zeros() {
                        continue;
                    }
                    let px = pixel_center(x, y);
                    contribs.clear();
                    let bin = &bins[ty * tiles_x + x / cfg.tile];
                    shade_pixel(bin.iter().copied(), splats, &px, cfg, Some(&mut contribs));
                    let t_final = contribs
                        .last()
                        .map(|c| c.t_before * (T::one() - c.alpha_hat))
                        .unwrap_or_else(T::one);
                    acc.g_bg += gc * t_final;
                    acc.g_nbg += gn * t_final;
                    // Suffix sums S = contributions behind the current splat,
                    // including the background.
                    let mut s_color = cfg.background * t_final;
                    let mut s_normal = cfg.normal_background * t_final;
                    for c in contribs.iter().rev() {
                        let s = &splats[c.sorted_idx as usize];
                        let g = &mut acc.per_splat[s.splat_id];
                        let w = c.alpha_hat * c.t_before;
                        g.color += gc * w;
                        g.normal += gn * w;
                        let g_alpha_hat = (gc.dot(&s.color) + gn.dot(&s.normal)) * c.t_before
                            - (gc.dot(&s_color) + gn.dot(&s_normal)) / (T::one() - c.alpha_hat);
                        s_color += s.color * w;
                        s_normal += s.normal * w;
                        if c.capped {
                            continue; // clamp: zero gradient past the cap
                        }
                        g.opacity += g_alpha_hat * c.weight;
                        let g_weight = g_alpha_hat * s.opacity;
                        // G = exp(-d^T A d / 2), d = px - mean.
                        let a_inv = cov2d_inverse(&s.cov2d);
                        let d = px - s.mean2d;
                        let ad = a_inv * d;
                        g.mean2d += ad * (c.weight * g_weight);
                        g.cov2d += ad * ad.transpose() * (c.weight * g_weight * T::of(0.5));
                    }
                }
            }
            acc
        })
        .collect();

    let mut per_splat = vec![SplatGrads::zero(); n_splats];
    let mut g_bg = Vector3::zeros();
    let mut g_nbg = Vector3::zeros();
    for band in bands {
        for (dst, src) in per_splat.iter_mut().zip(band.per_splat) {
            dst.color += src.color;
            dst.normal += src.normal;
            dst.mean2d += src.mean2d;
            dst.cov2d += src.cov2d;
            dst.opacity += src.opacity;
        }
        g_bg += band.g_bg;
        g_nbg += band.g_nbg;
    }
    Ok((per_splat, g_bg, g_nbg))
}
