//! Multiresolution hash-grid fields with a small MLP head.
//!
//! A field maps a canonical-space point to a 3-vector (a vertex displacement,
//! or a color squashed through a sigmoid). Each of `L` levels carries a
//! feature table of `T` rows x `F` features; a query trilinearly blends the
//! eight voxel-corner rows per level, concatenates levels into one encoding,
//! and feeds two ReLU hidden layers of width 64.
//!
//! Levels whose corner grid fits in the table are indexed densely; finer
//! levels fall back to the XOR-of-primes spatial hash, and colliding corners
//! simply share (and co-train) a row.

use crate::scalar::Real;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use thiserror::Error;

/// Per-axis multipliers of the spatial hash.
pub const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid hash grid config: {reason}")]
    InvalidConfig { reason: String },
    #[error("backward expects {expected} output gradients, got {got}")]
    GradientCountMismatch { expected: usize, got: usize },
}

/// Geometry of the encoder. The default mirrors the full-scale setup
/// (16 levels x 2^17 rows x 4 features from base resolution 4, growth 1.5);
/// tests and the desk-scale pipeline shrink `table_size`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HashGridConfig<T: Real> {
    pub levels: usize,
    pub table_size: usize,
    pub features: usize,
    pub base_resolution: u32,
    pub growth: f64,
    pub aabb_min: Vector3<T>,
    pub aabb_max: Vector3<T>,
}

impl<T: Real> Default for HashGridConfig<T> {
    fn default() -> Self {
        Self {
            levels: 16,
            table_size: 1 << 17,
            features: 4,
            base_resolution: 4,
            growth: 1.5,
            aabb_min: Vector3::repeat(T::zero()),
            aabb_max: Vector3::repeat(T::one()),
        }
    }
}

impl<T: Real> HashGridConfig<T> {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |reason: &str| {
            Err(FieldError::InvalidConfig {
                reason: reason.into(),
            })
        };
        if self.levels == 0 || self.features == 0 || self.table_size == 0 {
            return bad("levels, features and table_size must be positive");
        }
        if self.base_resolution == 0 {
            return bad("base resolution must be positive");
        }
        if self.growth < 1.0 {
            return bad("growth factor must be >= 1");
        }
        for k in 0..3 {
            // Negated so NaN bounds fail too.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(self.aabb_min[k] < self.aabb_max[k]) {
                return bad("aabb must have positive extent on every axis");
            }
        }
        Ok(())
    }

    /// `floor(base * growth^level)` voxels per axis.
    pub fn level_resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.growth.powi(level as i32)).floor() as u32
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    /// A level indexes densely when every corner of its grid fits in the
    /// table without hashing.
    pub fn level_is_dense(&self, level: usize) -> bool {
        let corners = self.level_resolution(level) as u64 + 1;
        corners.pow(3) <= self.table_size as u64
    }
}

fn corner_entry(dense: bool, resolution: u32, table_size: usize, c: [u32; 3]) -> usize {
    if dense {
        let stride = resolution as usize + 1;
        c[0] as usize + stride * (c[1] as usize + stride * c[2] as usize)
    } else {
        let h = (c[0] as u64).wrapping_mul(HASH_PRIMES[0])
            ^ (c[1] as u64).wrapping_mul(HASH_PRIMES[1])
            ^ (c[2] as u64).wrapping_mul(HASH_PRIMES[2]);
        (h % table_size as u64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    /// Raw head output (displacements).
    Linear,
    /// Elementwise sigmoid (colors in `[0, 1]`).
    Sigmoid,
}

const HIDDEN: usize = 64;
const OUT: usize = 3;

/// Hash tables plus the two-hidden-layer head. All trainable state lives in
/// `tables` and the six layer arrays, in the order reported by
/// [`HashField::param_chunks`].
#[derive(Debug, Clone, PartialEq)]
pub struct HashField<T: Real> {
    config: HashGridConfig<T>,
    activation: Activation,
    /// `[level][entry][feature]`, flattened.
    pub tables: Vec<T>,
    pub w1: DMatrix<T>,
    pub b1: DVector<T>,
    pub w2: DMatrix<T>,
    pub b2: DVector<T>,
    pub w3: DMatrix<T>,
    pub b3: DVector<T>,
}

fn kaiming_uniform<T: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<T> {
    let bound = (6.0 / cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-bound..bound)))
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> HashField<T> {
    /// Fresh field: tables `U[-1e-4, 1e-4]`, Kaiming-uniform hidden layers,
    /// zero final layer, so the initial output is exactly 0 (or 0.5 after a
    /// sigmoid).
    pub fn new<R: Rng>(
        config: HashGridConfig<T>,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, FieldError> {
        config.validate()?;
        let table_len = config.levels * config.table_size * config.features;
        let tables = (0..table_len)
            .map(|_| T::of(rng.gen_range(-1e-4..1e-4)))
            .collect();
        let input = config.output_dim();
        Ok(Self {
            config,
            activation,
            tables,
            w1: kaiming_uniform(HIDDEN, input, rng),
            b1: DVector::zeros(HIDDEN),
            w2: kaiming_uniform(HIDDEN, HIDDEN, rng),
            b2: DVector::zeros(HIDDEN),
            w3: DMatrix::zeros(OUT, HIDDEN),
            b3: DVector::zeros(OUT),
        })
    }

    pub fn config(&self) -> &HashGridConfig<T> {
        &self.config
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Per-level corner rows and trilinear weights for a query point.
    /// Queries outside the domain clamp to the boundary.
    fn corners(&self, p: &Vector3<T>) -> Vec<[(usize, T); 8]> {
        let cfg = &self.config;
        let mut out = Vec::with_capacity(cfg.levels);
        for level in 0..cfg.levels {
            let n = cfg.level_resolution(level);
            let dense = cfg.level_is_dense(level);
            let nf = T::of(n as f64);
            let mut cell = [0u32; 3];
            let mut frac = [T::zero(); 3];
            for k in 0..3 {
                let lo = cfg.aabb_min[k];
                let hi = cfg.aabb_max[k];
                let x = p[k].clamp(lo, hi);
                let u = (x - lo) / (hi - lo) * nf;
                let c = u.floor().as_f64() as i64;
                let c = c.clamp(0, n as i64 - 1) as u32;
                cell[k] = c;
                frac[k] = u - T::of(c as f64);
            }
            let mut entry = [(0usize, T::zero()); 8];
            for (ci, e) in entry.iter_mut().enumerate() {
                let dx = (ci & 1) as u32;
                let dy = ((ci >> 1) & 1) as u32;
                let dz = ((ci >> 2) & 1) as u32;
                let corner = [cell[0] + dx, cell[1] + dy, cell[2] + dz];
                let wx = if dx == 1 { frac[0] } else { T::one() - frac[0] };
                let wy = if dy == 1 { frac[1] } else { T::one() - frac[1] };
                let wz = if dz == 1 { frac[2] } else { T::one() - frac[2] };
                *e = (corner_entry(dense, n, cfg.table_size, corner), wx * wy * wz);
            }
            out.push(entry);
        }
        out
    }

    /// Table rows touched by a query, per level, for locality inspection.
    pub fn corner_indices(&self, p: &Vector3<T>) -> Vec<[usize; 8]> {
        self.corners(p)
            .iter()
            .map(|lvl| {
                let mut idx = [0usize; 8];
                for (k, (e, _)) in lvl.iter().enumerate() {
                    idx[k] = *e;
                }
                idx
            })
            .collect()
    }

    fn encode_from_corners(&self, corners: &[[(usize, T); 8]]) -> DVector<T> {
        let cfg = &self.config;
        let f = cfg.features;
        let mut enc = DVector::zeros(cfg.output_dim());
        for (level, lvl) in corners.iter().enumerate() {
            let level_base = level * cfg.table_size;
            for &(entry, w) in lvl {
                let base = (level_base + entry) * f;
                for j in 0..f {
                    enc[level * f + j] += self.tables[base + j] * w;
                }
            }
        }
        enc
    }

    /// Concatenated multi-level encoding of a point.
    pub fn encode(&self, p: &Vector3<T>) -> DVector<T> {
        self.encode_from_corners(&self.corners(p))
    }

    fn head(&self, enc: &DVector<T>) -> (DVector<T>, DVector<T>, Vector3<T>) {
        let mut z1 = &self.w1 * enc + &self.b1;
        z1.apply(|x| *x = x.max(T::zero()));
        let mut z2 = &self.w2 * &z1 + &self.b2;
        z2.apply(|x| *x = x.max(T::zero()));
        let z3 = &self.w3 * &z2 + &self.b3;
        let mut out = Vector3::new(z3[0], z3[1], z3[2]);
        if self.activation == Activation::Sigmoid {
            out.apply(|x| *x = sigmoid(*x));
        }
        (z1, z2, out)
    }

    /// Single-point evaluation without gradient bookkeeping.
    pub fn query(&self, p: &Vector3<T>) -> Vector3<T> {
        self.head(&self.encode(p)).2
    }

    /// Forward pass over a batch, retaining what the backward needs.
    pub fn forward_batch(&self, points: &[Vector3<T>]) -> FieldForward<T> {
        let mut outputs = Vec::with_capacity(points.len());
        let mut caches = Vec::with_capacity(points.len());
        for p in points {
            let corners = self.corners(p);
            let enc = self.encode_from_corners(&corners);
            let (a1, a2, out) = self.head(&enc);
            outputs.push(out);
            caches.push(QueryCache {
                corners,
                enc,
                a1,
                a2,
            });
        }
        FieldForward { outputs, caches }
    }

    /// Exact reverse-mode gradients for a batch; colliding table rows
    /// accumulate additively. Gradients w.r.t. the query points are not
    /// produced (query points are fixed canonical positions).
    pub fn backward_batch(
        &self,
        forward: &FieldForward<T>,
        g_outputs: &[Vector3<T>],
    ) -> Result<FieldGradients<T>, FieldError> {
        if g_outputs.len() != forward.outputs.len() {
            return Err(FieldError::GradientCountMismatch {
                expected: forward.outputs.len(),
                got: g_outputs.len(),
            });
        }
        let cfg = &self.config;
        let f = cfg.features;
        let mut g = FieldGradients::zeros_like(self);
        for ((cache, out), g_out) in forward.caches.iter().zip(&forward.outputs).zip(g_outputs) {
            let mut g_z3 = DVector::<T>::zeros(OUT);
            for k in 0..OUT {
                g_z3[k] = match self.activation {
                    Activation::Linear => g_out[k],
                    Activation::Sigmoid => g_out[k] * out[k] * (T::one() - out[k]),
                };
            }
            g.b3 += &g_z3;
            g.w3.ger(T::one(), &g_z3, &cache.a2, T::one());
            let mut g_a2 = self.w3.transpose() * &g_z3;
            for k in 0..HIDDEN {
                if cache.a2[k] <= T::zero() {
                    g_a2[k] = T::zero();
                }
            }
            g.b2 += &g_a2;
            g.w2.ger(T::one(), &g_a2, &cache.a1, T::one());
            let mut g_a1 = self.w2.transpose() * &g_a2;
            for k in 0..HIDDEN {
                if cache.a1[k] <= T::zero() {
                    g_a1[k] = T::zero();
                }
            }
            g.b1 += &g_a1;
            g.w1.ger(T::one(), &g_a1, &cache.enc, T::one());
            let g_enc = self.w1.transpose() * &g_a1;
            for (level, lvl) in cache.corners.iter().enumerate() {
                let level_base = level * cfg.table_size;
                for &(entry, w) in lvl {
                    let base = (level_base + entry) * f;
                    for j in 0..f {
                        g.tables[base + j] += g_enc[level * f + j] * w;
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn param_count(&self) -> usize {
        self.tables.len()
            + self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
    }

    /// Trainable state as ordered slices: tables, then each head layer.
    pub fn param_chunks(&self) -> Vec<&[T]> {
        vec![
            &self.tables,
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
    }

    pub fn param_chunks_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.tables,
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ]
    }
}

/// Activations and corner bookkeeping retained by [`HashField::forward_batch`].
#[derive(Debug, Clone)]
pub struct FieldForward<T: Real> {
    pub outputs: Vec<Vector3<T>>,
    caches: Vec<QueryCache<T>>,
}

#[derive(Debug, Clone)]
struct QueryCache<T: Real> {
    corners: Vec<[(usize, T); 8]>,
    enc: DVector<T>,
    a1: DVector<T>,
    a2: DVector<T>,
}

/// Gradient of a scalar loss w.r.t. every field parameter, shaped like the
/// field itself.
#[derive(Debug, Clone)]
pub struct FieldGradients<T: Real> {
    pub tables: Vec<T>,
    pub w1: DMatrix<T>,
    pub b1: DVector<T>,
    pub w2: DMatrix<T>,
    pub b2: DVector<T>,
    pub w3: DMatrix<T>,
    pub b3: DVector<T>,
}

impl<T: Real> FieldGradients<T> {
    pub fn zeros_like(field: &HashField<T>) -> Self {
        Self {
            tables: vec![T::zero(); field.tables.len()],
            w1: DMatrix::zeros(field.w1.nrows(), field.w1.ncols()),
            b1: DVector::zeros(field.b1.len()),
            w2: DMatrix::zeros(field.w2.nrows(), field.w2.ncols()),
            b2: DVector::zeros(field.b2.len()),
            w3: DMatrix::zeros(field.w3.nrows(), field.w3.ncols()),
            b3: DVector::zeros(field.b3.len()),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tables.iter_mut().zip(&other.tables) {
            *a += *b;
        }
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
        self.w3 += &other.w3;
        self.b3 += &other.b3;
    }

    /// Ordered to match [`HashField::param_chunks`].
    pub fn chunks(&self) -> Vec<&[T]> {
        vec![
            &self.tables,
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
    }

    pub fn chunks_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.tables,
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ]
    }

    pub fn norm_sq(&self) -> T {
        self.chunks()
            .iter()
            .flat_map(|c| c.iter())
            .fold(T::zero(), |acc, x| acc + *x * *x)
    }
}
