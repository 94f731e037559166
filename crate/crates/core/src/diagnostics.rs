//! Moran's I and across-chain health checks.

use crate::data::SpatialCoords;
use crate::error::{Error, Result};
use crate::inference::compute_ppi;
use crate::mcmc::{AcceptanceCounters, ChainTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    /// `exp(-d^2 / (2 b^2))`; `None` uses the median pairwise distance.
    Gaussian { bandwidth: Option<f64> },
    /// Weight 1 to each of the `k` nearest spots.
    Knn(usize),
    /// Weight 1 to every spot within `radius`.
    DistanceBand(f64),
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::Gaussian { bandwidth: None }
    }
}

/// Dense spatial weights with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    /// Row-major `n x n` weights. The diagonal is ignored.
    pub fn from_dense(n: usize, mut w: Vec<f64>) -> Result<Self> {
        if w.len() != n * n {
            return Err(Error::Validation(format!("weight buffer has {} entries, expected {}", w.len(), n * n)));
        }
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Validation("weights must be non-negative and finite".into()));
        }
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        for i in 0..n {
            if w[i * n..(i + 1) * n].iter().sum::<f64>() <= 0.0 {
                return Err(Error::Validation(format!("spot {i} has no neighbours")));
            }
        }
        Ok(WeightMatrix { n, w })
    }

    pub fn build(coords: &SpatialCoords, scheme: WeightScheme) -> Result<Self> {
        let pts = coords.points();
        let n = pts.len();
        let dist = |i: usize, j: usize| (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
        let mut w = vec![0.0; n * n];
        match scheme {
            WeightScheme::Gaussian { bandwidth } => {
                let b = match bandwidth {
                    Some(b) => b,
                    None => median_distance(coords),
                };
                if !(b > 0.0) {
                    return Err(Error::Validation(format!("bandwidth must be positive, got {b}")));
                }
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let d = dist(i, j);
                            w[i * n + j] = (-d * d / (2.0 * b * b)).exp();
                        }
                    }
                }
            }
            WeightScheme::Knn(k) => {
                if k == 0 || k >= n {
                    return Err(Error::Validation(format!("k must be in 1..{n}, got {k}")));
                }
                for i in 0..n {
                    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                    others.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
                    for &j in &others[..k] {
                        w[i * n + j] = 1.0;
                    }
                }
            }
            WeightScheme::DistanceBand(r) => {
                for i in 0..n {
                    for j in 0..n {
                        if i != j && dist(i, j) <= r {
                            w[i * n + j] = 1.0;
                        }
                    }
                }
            }
        }
        Self::from_dense(n, w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

fn median_distance(coords: &SpatialCoords) -> f64 {
    let pts = coords.points();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            d.push((pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        (d[m / 2 - 1] + d[m / 2]) / 2.0
    }
}

/// `(n / sum W) * sum_ij W_ij z_i z_j / sum_i z_i^2` with `z = v - mean(v)`.
pub fn morans_i(values: &[f64], w: &WeightMatrix) -> Result<f64> {
    let n = w.n;
    if values.len() != n {
        return Err(Error::Validation(format!("{} values for {n} spots", values.len())));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|x| x * x).sum();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(ss > (1e-12 * scale).powi(2) * n as f64) {
        return Err(Error::Undefined("Moran's I of a constant field".into()));
    }
    let mut cross = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        let row = &w.w[i * n..(i + 1) * n];
        total += row.iter().sum::<f64>();
        cross += z[i] * row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(n as f64 / total * cross / ss)
}

/// Across-chain agreement and move acceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainHealth {
    pub gene_ids: Vec<String>,
    /// PPI of each chain, indexed `[chain][gene]`.
    pub chain_ppi: Vec<Vec<f64>>,
    /// Sample standard deviation of the per-chain PPIs.
    pub ppi_sd: Vec<f64>,
    /// Genes whose PPI standard deviation exceeds the threshold.
    pub flagged: Vec<usize>,
    pub acceptance: Vec<AcceptanceCounters>,
}

pub const DEFAULT_PPI_SD_THRESHOLD: f64 = 0.25;

pub fn chain_health(traces: &[ChainTrace], sd_threshold: f64) -> Result<ChainHealth> {
    if traces.len() < 2 {
        return Err(Error::Validation("chain health needs at least two chains".into()));
    }
    let chain_ppi = traces
        .iter()
        .map(|t| compute_ppi(std::slice::from_ref(t)))
        .collect::<Result<Vec<_>>>()?;
    let p = chain_ppi[0].len();
    if traces.iter().any(|t| t.gene_ids != traces[0].gene_ids) {
        return Err(Error::Validation("chain traces cover different genes".into()));
    }
    let k = traces.len() as f64;
    let ppi_sd: Vec<f64> = (0..p)
        .map(|j| {
            let mean = chain_ppi.iter().map(|c| c[j]).sum::<f64>() / k;
            (chain_ppi.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        })
        .collect();
    let flagged = (0..p).filter(|&j| ppi_sd[j] > sd_threshold).collect();
    Ok(ChainHealth {
        gene_ids: traces[0].gene_ids.clone(),
        chain_ppi,
        ppi_sd,
        flagged,
        acceptance: traces.iter().map(|t| t.acceptance).collect(),
    })
}
