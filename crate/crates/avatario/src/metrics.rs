//! Evaluation metrics: bidirectional surface-sample distance (v2v, mm),
//! PSNR, SSIM (shared with the training loss), and the report document.
//!
//! v2v samples both surfaces area-weighted with the same seed, so swapping
//! the arguments reproduces the identical value. Nearest-point queries run
//! through a small BVH; distances are computed after aligning the surface
//! centroids (scales are left untouched).

use avatar_core::losses;
use avatar_core::TemplateMesh64;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const V2V_SAMPLES: usize = 100_000;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("mesh has no surface area to sample")]
    EmptyMesh,
    #[error("image sizes differ: {a} vs {b} pixels")]
    ShapeMismatch { a: usize, b: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Loss(#[from] losses::LossError),
}

/// Closest point on triangle `abc` to `p` (the standard region walk).
fn closest_point_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return a + ab * t;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return a + ac * t;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * t;
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
        // Degenerate triangle: fall back to the nearest vertex.
        let da = (p - a).norm_squared();
        let db = (p - b).norm_squared();
        let dc = (p - c).norm_squared();
        return if da <= db && da <= dc {
            *a
        } else if db <= dc {
            *b
        } else {
            *c
        };
    }
    let v = vb / denom;
    let w = vc / denom;
    a + ab * v + ac * w
}

struct BvhNode {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    /// Leaf: `start..start+count` into `order`. Inner: left child is the
    /// next node, `right` holds the other child's index.
    right: u32,
    start: u32,
    count: u32,
}

/// Static triangle BVH for nearest-point queries.
pub struct MeshBvh {
    nodes: Vec<BvhNode>,
    tris: Vec<[Vector3<f64>; 3]>,
    order: Vec<u32>,
}

fn aabb_dist_sq(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let v = p[k].clamp(lo[k], hi[k]) - p[k];
        d += v * v;
    }
    d
}

impl MeshBvh {
    pub fn build(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Self {
        let tris: Vec<[Vector3<f64>; 3]> = faces
            .iter()
            .map(|f| [vertices[f[0]], vertices[f[1]], vertices[f[2]]])
            .collect();
        let centroids: Vec<Vector3<f64>> =
            tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            Self::split(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Self { nodes, tris, order }
    }

    fn bounds(
        tris: &[[Vector3<f64>; 3]],
        order: &[u32],
        start: usize,
        len: usize,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &t in &order[start..start + len] {
            for v in &tris[t as usize] {
                for k in 0..3 {
                    lo[k] = lo[k].min(v[k]);
                    hi[k] = hi[k].max(v[k]);
                }
            }
        }
        (lo, hi)
    }

    fn split(
        tris: &[[Vector3<f64>; 3]],
        centroids: &[Vector3<f64>],
        order: &mut [u32],
        start: usize,
        len: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> u32 {
        let (lo, hi) = Self::bounds(tris, order, start, len);
        let id = nodes.len() as u32;
        nodes.push(BvhNode {
            lo,
            hi,
            right: 0,
            start: start as u32,
            count: 0,
        });
        if len <= 8 {
            nodes[id as usize].count = len as u32;
            return id;
        }
        let mut clo = Vector3::repeat(f64::INFINITY);
        let mut chi = Vector3::repeat(f64::NEG_INFINITY);
        for &t in &order[start..start + len] {
            let c = &centroids[t as usize];
            for k in 0..3 {
                clo[k] = clo[k].min(c[k]);
                chi[k] = chi[k].max(c[k]);
            }
        }
        let ext = chi - clo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let slice = &mut order[start..start + len];
        slice.sort_by(|&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let half = len / 2;
        // Left subtree occupies the nodes immediately after `id`.
        Self::split(tris, centroids, order, start, half, nodes);
        let right = Self::split(tris, centroids, order, start + half, len - half, nodes);
        nodes[id as usize].right = right;
        id
    }

    /// Squared distance from `p` to the surface.
    pub fn distance_sq(&self, p: &Vector3<f64>) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if aabb_dist_sq(p, &node.lo, &node.hi) >= best {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let tri = &self.tris[t as usize];
                    let q = closest_point_triangle(p, &tri[0], &tri[1], &tri[2]);
                    best = best.min((p - q).norm_squared());
                }
            } else {
                // Visit the nearer child last so it pops first.
                let l = id + 1;
                let r = node.right;
                let dl = aabb_dist_sq(p, &self.nodes[l as usize].lo, &self.nodes[l as usize].hi);
                let dr = aabb_dist_sq(p, &self.nodes[r as usize].lo, &self.nodes[r as usize].hi);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

fn face_areas(mesh: &TemplateMesh64, positions: &[Vector3<f64>]) -> Vec<f64> {
    (0..mesh.face_count())
        .map(|f| mesh.face_area(positions, f))
        .collect()
}

/// Area-weighted surface centroid; used to align meshes before v2v.
pub fn surface_centroid(mesh: &TemplateMesh64) -> Result<Vector3<f64>, MetricError> {
    let areas = face_areas(mesh, mesh.vertices());
    let total: f64 = areas.iter().sum();
    // Negated so a NaN total counts as empty.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(total > 0.0) {
        return Err(MetricError::EmptyMesh);
    }
    let mut c = Vector3::zeros();
    for (f, a) in areas.iter().enumerate() {
        c += mesh.face_centroid(mesh.vertices(), f) * *a;
    }
    Ok(c / total)
}

/// `n` area-weighted uniform samples on the surface.
pub fn sample_surface(
    mesh: &TemplateMesh64,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vector3<f64>>, MetricError> {
    let areas = face_areas(mesh, mesh.vertices());
    let total: f64 = areas.iter().sum();
    // Negated so a NaN total counts as empty.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(total > 0.0) {
        return Err(MetricError::EmptyMesh);
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let verts = mesh.vertices();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let f = cumulative.partition_point(|&c| c < r).min(areas.len() - 1);
        let [ia, ib, ic] = mesh.faces()[f];
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        out.push(verts[ia] * (1.0 - s) + verts[ib] * (s * (1.0 - r2)) + verts[ic] * (s * r2));
    }
    Ok(out)
}

fn mean_nearest(samples: &[Vector3<f64>], bvh: &MeshBvh, shift: &Vector3<f64>) -> f64 {
    // Collect in order and reduce sequentially: a parallel float sum would
    // round differently depending on how work was stolen.
    let distances: Vec<f64> = samples
        .par_iter()
        .map(|p| bvh.distance_sq(&(p - shift)).sqrt())
        .collect();
    distances.iter().sum::<f64>() / samples.len() as f64
}

/// Bidirectional mean nearest-point distance in millimeters. Both surfaces
/// are sampled with the same seed, centers are aligned first, and the two
/// directional means are averaged, so the metric is symmetric by
/// construction.
pub fn v2v_mm(
    a: &TemplateMesh64,
    b: &TemplateMesh64,
    samples: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    let ca = surface_centroid(a)?;
    let cb = surface_centroid(b)?;
    let bvh_a = MeshBvh::build(a.vertices(), a.faces());
    let bvh_b = MeshBvh::build(b.vertices(), b.faces());
    let samples_a = sample_surface(a, samples, &mut ChaCha12Rng::seed_from_u64(seed))?;
    let samples_b = sample_surface(b, samples, &mut ChaCha12Rng::seed_from_u64(seed))?;
    // Align centers only: querying against B moves each A sample by
    // `cb - ca` (and vice versa), which equals comparing both surfaces in
    // centered coordinates.
    let shift = cb - ca;
    let d_ab = mean_nearest(&samples_a, &bvh_b, &-shift);
    let d_ba = mean_nearest(&samples_b, &bvh_a, &shift);
    Ok(0.5 * (d_ab + d_ba) * 1000.0)
}

/// `10 log10(1 / MSE)` on `[0,1]` images; identical images report infinity.
pub fn psnr_db(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, MetricError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(MetricError::ShapeMismatch {
            a: pred.len(),
            b: gt.len(),
        });
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let d = p - g;
        sum += d.norm_squared();
    }
    let mse = sum / (3 * pred.len()) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// SSIM by the loss module's definition (Gaussian 11x11 window).
pub fn ssim(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    width: usize,
    height: usize,
) -> Result<f64, MetricError> {
    Ok(losses::ssim_value(pred, gt, width, height, None)?)
}

/// The eval report. LPIPS needs a pretrained network, so it is reported as
/// absent rather than substituted.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub v2v_mm: Option<f64>,
    pub baseline_v2v_mm: Option<f64>,
    pub nc: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> serde_json::Value {
        let psnr = if self.psnr_db.is_finite() {
            serde_json::json!(self.psnr_db)
        } else {
            serde_json::json!("inf")
        };
        serde_json::json!({
            "psnr_db": psnr,
            "ssim": self.ssim,
            "v2v_mm": self.v2v_mm,
            "baseline_v2v_mm": self.baseline_v2v_mm,
            "nc": self.nc,
            "lpips": serde_json::Value::Null,
            "lpips_note": "not computed: requires a pretrained perceptual network",
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), MetricError> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        std::fs::write(path, text).map_err(|source| MetricError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use avatar_core::geometry::icosphere;

    #[test]
    fn closest_point_regions() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 0.0, 0.0);
        let c = Vector3::new(0.0, 1.0, 0.0);
        // Interior projection.
        let q = closest_point_triangle(&Vector3::new(0.2, 0.2, 5.0), &a, &b, &c);
        assert!((q - Vector3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        // Vertex region.
        let q = closest_point_triangle(&Vector3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert!((q - a).norm() < 1e-12);
        // Edge region.
        let q = closest_point_triangle(&Vector3::new(0.5, -2.0, 0.0), &a, &b, &c);
        assert!((q - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mesh = icosphere::<f64>(2);
        let bvh = MeshBvh::build(mesh.vertices(), mesh.faces());
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        for _ in 0..200 {
            let p = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let brute = mesh
                .faces()
                .iter()
                .map(|f| {
                    let q = closest_point_triangle(
                        &p,
                        &mesh.vertices()[f[0]],
                        &mesh.vertices()[f[1]],
                        &mesh.vertices()[f[2]],
                    );
                    (p - q).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(bvh.distance_sq(&p), brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_meshes_have_zero_v2v() {
        let mesh = icosphere::<f64>(2);
        let d = v2v_mm(&mesh, &mesh, 5_000, 9).unwrap();
        assert!(d < 1e-9, "v2v {d}");
    }

    #[test]
    fn offset_spheres_measure_about_one_millimeter() {
        let a = icosphere::<f64>(3);
        let scaled: Vec<Vector3<f64>> = a.vertices().iter().map(|v| v * 1.001).collect();
        let b = TemplateMesh64::new(scaled, a.faces().to_vec()).unwrap();
        let d = v2v_mm(&a, &b, 20_000, 9).unwrap();
        assert!((0.9..1.1).contains(&d), "v2v {d}");
    }

    #[test]
    fn v2v_is_symmetric() {
        let a = icosphere::<f64>(2);
        let shifted: Vec<Vector3<f64>> = a
            .vertices()
            .iter()
            .map(|v| Vector3::new(v.x * 1.02, v.y, v.z + 0.3))
            .collect();
        let b = TemplateMesh64::new(shifted, a.faces().to_vec()).unwrap();
        let ab = v2v_mm(&a, &b, 4_000, 11).unwrap();
        let ba = v2v_mm(&b, &a, 4_000, 11).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn center_alignment_cancels_translation() {
        let a = icosphere::<f64>(2);
        let moved: Vec<Vector3<f64>> = a
            .vertices()
            .iter()
            .map(|v| v + Vector3::new(5.0, -2.0, 0.7))
            .collect();
        let b = TemplateMesh64::new(moved, a.faces().to_vec()).unwrap();
        let d = v2v_mm(&a, &b, 4_000, 12).unwrap();
        assert!(d < 1e-9, "translation should be aligned away, got {d}");
    }

    #[test]
    fn psnr_closed_forms() {
        let zeros = vec![Vector3::repeat(0.0); 64];
        let tenth = vec![Vector3::repeat(0.1); 64];
        assert!(psnr_db(&zeros, &zeros).unwrap().is_infinite());
        assert_relative_eq!(psnr_db(&zeros, &tenth).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn ssim_agrees_with_loss_module() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let (w, h) = (16, 12);
        let a: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let b: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let ours = ssim(&a, &b, w, h).unwrap();
        let theirs = losses::ssim_value(&a, &b, w, h, None).unwrap();
        assert!((ours - theirs).abs() < 1e-12);
        assert!((ssim(&a, &a, w, h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let mesh = TemplateMesh64::new(vec![Vector3::zeros()], vec![]).unwrap();
        assert!(matches!(
            v2v_mm(&mesh, &mesh, 100, 1),
            Err(MetricError::EmptyMesh)
        ));
    }

    #[test]
    fn report_serializes_infinity_sentinel() {
        let report = MetricsReport {
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            v2v_mm: None,
            baseline_v2v_mm: None,
            nc: 0.0,
        };
        let v = report.to_json();
        assert_eq!(v["psnr_db"], serde_json::json!("inf"));
        assert!(v["lpips"].is_null());
    }
}
