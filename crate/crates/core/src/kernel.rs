//! Pairwise distances, squared-exponential kernels and the factor cache.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use faer::{Mat, Side};

use crate::data::{DesignMatrix, SpatialCoords};
use crate::density::MvtFactor;
use crate::error::{Error, Result};

/// Upper limit of the diagonal jitter escalation.
pub const MAX_JITTER: f64 = 1e-4;

/// Initial diagonal jitter for an n×n kernel.
pub fn default_jitter(n: usize) -> f64 {
    (1e-8 * n as f64).min(MAX_JITTER)
}

/// Euclidean distance matrix, symmetric with zero diagonal.
pub fn distance_matrix(coords: &SpatialCoords) -> Mat<f64> {
    let pts = coords.points();
    Mat::from_fn(pts.len(), pts.len(), |i, j| {
        let dx = pts[i][0] - pts[j][0];
        let dy = pts[i][1] - pts[j][1];
        dx.hypot(dy)
    })
}

/// Smallest non-zero and largest pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBounds {
    pub t_min: f64,
    pub t_max: f64,
}

impl DistanceBounds {
    /// Lower end of the length-scale support, `t_min / 2`.
    pub fn l_lower(&self) -> f64 {
        self.t_min / 2.0
    }

    /// Upper end of the length-scale support, `2 t_max`.
    pub fn l_upper(&self) -> f64 {
        2.0 * self.t_max
    }
}

pub fn distance_bounds(distances: &Mat<f64>) -> Result<DistanceBounds> {
    let n = distances.nrows();
    let mut t_min = f64::INFINITY;
    let mut t_max = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            let d = distances[(i, j)];
            if d > 0.0 {
                t_min = t_min.min(d);
            }
            t_max = t_max.max(d);
        }
    }
    if t_max <= 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    Ok(DistanceBounds { t_min, t_max })
}

/// SE kernel evaluated on a distance matrix, plus diagonal jitter.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub k: Mat<f64>,
    pub length_scale: f64,
    pub jitter: f64,
}

impl KernelMatrix {
    /// The white-noise kernel `I`.
    pub fn identity(n: usize) -> Self {
        KernelMatrix {
            k: Mat::identity(n, n),
            length_scale: f64::INFINITY,
            jitter: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

fn se_values(distances: &Mat<f64>, l: f64, jitter: f64) -> Mat<f64> {
    let inv = -0.5 / (l * l);
    let n = distances.nrows();
    Mat::from_fn(n, n, |i, j| {
        let d = distances[(i, j)];
        (d * d * inv).exp() + if i == j { jitter } else { 0.0 }
    })
}

/// Strict lower triangle of the squared distances, packed column by column.
///
/// When few distinct values occur (regular lattices) each entry also stores
/// the index of its value so a kernel needs one `exp` per distinct distance.
#[derive(Debug, Clone)]
pub(crate) struct SquaredDistances {
    n: usize,
    packed: Vec<f64>,
    levels: Option<(Vec<f64>, Vec<u32>)>,
}

impl SquaredDistances {
    pub(crate) fn new(distances: &Mat<f64>, index_levels: bool) -> Self {
        let n = distances.nrows();
        let mut packed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for j in 0..n {
            for i in (j + 1)..n {
                let d = distances[(i, j)];
                packed.push(d * d);
            }
        }
        let levels = if index_levels {
            let mut uniq = packed.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            (uniq.len() * 8 <= packed.len()).then(|| {
                let idx = packed
                    .iter()
                    .map(|d| uniq.binary_search_by(|u| u.total_cmp(d)).unwrap() as u32)
                    .collect();
                (uniq, idx)
            })
        } else {
            None
        };
        SquaredDistances { n, packed, levels }
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    /// Lower triangle of `K(l) + jitter I + h X X^T`. The strict upper
    /// triangle is left at zero.
    pub(crate) fn lower_matrix(&self, l: f64, jitter: f64, x: &DesignMatrix, h: f64) -> Mat<f64> {
        let n = self.n;
        let inv = -0.5 / (l * l);
        let xm = x.matrix();
        let table: Option<Vec<f64>> = self.levels.as_ref().map(|(u, _)| u.iter().map(|d| (d * inv).exp()).collect());
        let mut m = Mat::<f64>::zeros(n, n);
        let mut k = 0;
        for j in 0..n {
            let len = n - j - 1;
            let col = m.col_as_slice_mut(j);
            col[j] = 1.0 + jitter;
            let below = &mut col[j + 1..];
            match (&table, &self.levels) {
                (Some(vals), Some((_, idx))) => {
                    for (c, &q) in below.iter_mut().zip(&idx[k..k + len]) {
                        *c = vals[q as usize];
                    }
                }
                _ => {
                    for (c, &d2) in below.iter_mut().zip(&self.packed[k..k + len]) {
                        *c = (d2 * inv).exp();
                    }
                }
            }
            for r in 0..xm.ncols() {
                let xc = xm.col_as_slice(r);
                let hx = h * xc[j];
                for (c, &xi) in col[j..].iter_mut().zip(&xc[j..]) {
                    *c += hx * xi;
                }
            }
            k += len;
        }
        m
    }
}

/// `K[i][j] = exp(-D[i][j]^2 / (2 l^2)) + jitter 1{i=j}`.
///
/// If the result is not numerically positive definite the jitter is raised
/// tenfold, up to [`MAX_JITTER`].
pub fn se_kernel(distances: &Mat<f64>, l: f64, jitter: f64) -> Result<KernelMatrix> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Validation(format!("length-scale must be positive, got {l}")));
    }
    let mut jitter = jitter.max(0.0);
    loop {
        let k = se_values(distances, l, jitter);
        if k.llt(Side::Lower).is_ok() {
            return Ok(KernelMatrix {
                k,
                length_scale: l,
                jitter,
            });
        }
        if jitter >= MAX_JITTER {
            return Err(Error::Cholesky {
                length_scale: l,
                jitter,
            });
        }
        jitter = if jitter == 0.0 {
            default_jitter(distances.nrows())
        } else {
            (jitter * 10.0).min(MAX_JITTER)
        };
    }
}

/// Memoized factors of `K(l) + h X X^T`, keyed by the exact bit pattern of
/// `l`. Bounded, with first-in first-out eviction.
///
/// Shared by every chain and gene of a run; lookups take a short lock and
/// factorizations happen outside it.
pub struct KernelCache {
    distances: SquaredDistances,
    design: DesignMatrix,
    h: f64,
    capacity: usize,
    inner: Mutex<CacheInner>,
}

#[derive(Default)]
struct CacheInner {
    map: HashMap<u64, Arc<MvtFactor>>,
    order: VecDeque<u64>,
    hits: u64,
    misses: u64,
}

impl KernelCache {
    pub fn new(distances: &Mat<f64>, design: DesignMatrix, h: f64, capacity: usize) -> Self {
        KernelCache {
            distances: SquaredDistances::new(distances, true),
            design,
            h,
            capacity: capacity.max(1),
            inner: Mutex::new(CacheInner::default()),
        }
    }

    pub fn get(&self, l: f64) -> Result<Arc<MvtFactor>> {
        let key = l.to_bits();
        {
            let mut inner = self.inner.lock().unwrap();
            if let Some(f) = inner.map.get(&key).cloned() {
                inner.hits += 1;
                return Ok(f);
            }
            inner.misses += 1;
        }
        let factor = Arc::new(MvtFactor::spatial_from(&self.distances, l, &self.design, self.h)?);
        let mut inner = self.inner.lock().unwrap();
        if let Some(existing) = inner.map.get(&key) {
            return Ok(existing.clone());
        }
        if inner.map.len() >= self.capacity {
            if let Some(old) = inner.order.pop_front() {
                inner.map.remove(&old);
            }
        }
        inner.map.insert(key, factor.clone());
        inner.order.push_back(key);
        Ok(factor)
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        let inner = self.inner.lock().unwrap();
        (inner.hits, inner.misses)
    }
}
