//! Synthetic spatial count data with known spatially variable genes, and the
//! classification metrics used to score detectors on it.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{CountMatrix, SpatialCoords};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Shape of the spatial effect carried by SV genes.
#[derive(Debug, Clone)]
pub enum Pattern {
    /// Peak on the four central lattice spots, fading out over `radius`.
    Spot,
    /// Peak at the bottom-left corner, fading out along the diagonal.
    Linear,
    /// Constant boost on the spots marked `true`.
    BinaryMask { coords: SpatialCoords, high: Vec<bool> },
}

#[derive(Debug, Clone)]
pub struct PatternSpec {
    pub pattern: Pattern,
    /// Multiplicative effect at the peak; the effect field is its log.
    pub fold_change: f64,
    pub radius: f64,
    /// Side of the square lattice for the spot and linear patterns.
    pub side: usize,
}

impl PatternSpec {
    pub fn spot() -> Self {
        PatternSpec {
            pattern: Pattern::Spot,
            fold_change: 6.0,
            radius: 5.0,
            side: 16,
        }
    }

    pub fn linear() -> Self {
        PatternSpec {
            pattern: Pattern::Linear,
            ..Self::spot()
        }
    }

    pub fn binary_mask(coords: SpatialCoords, high: Vec<bool>) -> Self {
        PatternSpec {
            pattern: Pattern::BinaryMask { coords, high },
            fold_change: 3.0,
            ..Self::spot()
        }
    }

    pub fn coords(&self) -> Result<SpatialCoords> {
        match &self.pattern {
            Pattern::BinaryMask { coords, .. } => Ok(coords.clone()),
            _ => lattice_coords(self.side),
        }
    }
}

/// Unit square lattice; spot `k` sits at column `k % side`, row `k / side`,
/// with `(0, 0)` the bottom-left corner. Ids are `"<x>x<y>"`.
pub fn lattice_coords(side: usize) -> Result<SpatialCoords> {
    let pts: Vec<[f64; 2]> = (0..side * side)
        .map(|k| [(k % side) as f64, (k / side) as f64])
        .collect();
    let ids = pts.iter().map(|p| format!("{}x{}", p[0], p[1])).collect();
    SpatialCoords::new(pts, ids)
}

/// Per-spot effect `e_i` of an SV gene.
pub fn make_effect_field(spec: &PatternSpec) -> Result<Vec<f64>> {
    if !(spec.fold_change > 0.0) || !(spec.radius > 0.0) {
        return Err(Error::Validation("fold change and radius must be positive".into()));
    }
    let peak = spec.fold_change.ln();
    match &spec.pattern {
        Pattern::Spot => {
            let side = spec.side;
            if side < 2 {
                return Err(Error::Validation("lattice side must be at least 2".into()));
            }
            let (a, b) = ((side / 2 - 1) as f64, (side / 2) as f64);
            let centers = [[a, a], [a, b], [b, a], [b, b]];
            Ok(lattice_points(side)
                .map(|[x, y]| {
                    let d = centers
                        .iter()
                        .map(|c| (x - c[0]).hypot(y - c[1]))
                        .fold(f64::INFINITY, f64::min);
                    peak * (1.0 - d / spec.radius).max(0.0)
                })
                .collect())
        }
        Pattern::Linear => {
            let side = spec.side;
            if side < 2 {
                return Err(Error::Validation("lattice side must be at least 2".into()));
            }
            let full = 2.0 * (side - 1) as f64 / 2f64.sqrt();
            Ok(lattice_points(side)
                .map(|[x, y]| {
                    let d = (x + y) / 2f64.sqrt();
                    peak * (1.0 - d / full).max(0.0)
                })
                .collect())
        }
        Pattern::BinaryMask { coords, high } => {
            if coords.len() != high.len() {
                return Err(Error::Validation(format!(
                    "mask has {} labels for {} spots",
                    high.len(),
                    coords.len()
                )));
            }
            Ok(high.iter().map(|&h| if h { peak } else { 0.0 }).collect())
        }
    }
}

fn lattice_points(side: usize) -> impl Iterator<Item = [f64; 2]> {
    (0..side * side).map(move |k| [(k % side) as f64, (k / side) as f64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_genes: usize,
    /// The first `n_sv` genes carry the spatial effect.
    pub n_sv: usize,
    pub beta_baseline: f64,
    pub noise_sd: f64,
    /// Standard deviation of log size factors.
    pub size_factor_sd: f64,
    pub dispersion_mean: f64,
    /// Fraction of spots per gene whose count is forced to zero.
    pub false_zero_frac: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_genes: 100,
            n_sv: 15,
            beta_baseline: 2.0,
            noise_sd: 0.3,
            size_factor_sd: 0.2,
            dispersion_mean: 10.0,
            false_zero_frac: 0.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_genes == 0 || self.n_sv > self.n_genes {
            return Err(Error::Validation(format!(
                "need 0 <= n_sv <= n_genes and n_genes > 0, got {} and {}",
                self.n_sv, self.n_genes
            )));
        }
        if !(self.noise_sd > 0.0 && self.size_factor_sd > 0.0 && self.dispersion_mean > 0.0) {
            return Err(Error::Validation("standard deviations and dispersion mean must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.false_zero_frac) {
            return Err(Error::Validation("false-zero fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub counts: CountMatrix,
    pub coords: SpatialCoords,
    /// True SV labels per gene.
    pub truth: Vec<bool>,
    /// Spot-major `n x p` expression used to draw the counts.
    pub true_lambda: Vec<f64>,
}

/// One NB(`mu`, `phi`) draw as a gamma-Poisson mixture.
pub fn sample_nb<R: Rng + ?Sized>(rng: &mut R, mu: f64, phi: f64) -> u32 {
    let rate = Gamma::new(phi, mu / phi).map(|g| g.sample(rng)).unwrap_or(0.0);
    if !(rate > 0.0) {
        return 0;
    }
    Poisson::new(rate).map(|p| p.sample(rng)).unwrap_or(0.0).min(u32::MAX as f64) as u32
}

/// Draws `log lambda_ij = beta + e_i 1{j SV} + eps_ij` and
/// `y_ij ~ NB(s_i lambda_ij, phi_j)`, then forces `ceil(frac * n)` random
/// spots per gene to zero.
pub fn generate_dataset(spec: &PatternSpec, cfg: &SimConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let effect = make_effect_field(spec)?;
    let coords = spec.coords()?;
    let n = coords.len();
    let p = cfg.n_genes;
    let mut rng = stream(cfg.seed, 0);
    let s: Vec<f64> = {
        let ln = LogNormal::new(0.0, cfg.size_factor_sd).expect("positive sd");
        (0..n).map(|_| ln.sample(&mut rng)).collect()
    };
    let noise = Normal::new(0.0, cfg.noise_sd).expect("positive sd");
    let dispersion = Exp::new(1.0 / cfg.dispersion_mean).expect("positive mean");
    let n_zero = (cfg.false_zero_frac * n as f64).ceil() as usize;
    let mut values = vec![0u32; n * p];
    let mut true_lambda = vec![0.0; n * p];
    for j in 0..p {
        let sv = j < cfg.n_sv;
        let phi = dispersion.sample(&mut rng);
        for i in 0..n {
            let e = if sv { effect[i] } else { 0.0 };
            let lambda = (cfg.beta_baseline + e + noise.sample(&mut rng)).exp();
            true_lambda[i * p + j] = lambda;
            values[i * p + j] = sample_nb(&mut rng, s[i] * lambda, phi);
        }
        if n_zero > 0 {
            for i in sample(&mut rng, n, n_zero.min(n)) {
                values[i * p + j] = 0;
            }
        }
    }
    let gene_ids = (0..p).map(|j| format!("gene{:04}", j + 1)).collect();
    let counts = CountMatrix::new(values, coords.spot_ids().to_vec(), gene_ids)?;
    Ok(LabeledDataset {
        counts,
        coords,
        truth: (0..p).map(|j| j < cfg.n_sv).collect(),
        true_lambda,
    })
}

/// Area under the ROC curve: the chance a random positive outscores a random
/// negative, ties counting one half.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // mid-ranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut m = k;
        while m + 1 < order.len() && scores[order[m + 1]] == scores[order[k]] {
            m += 1;
        }
        let mid = (k + m) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[k..=m].iter().filter(|&&i| truth[i]).count() as f64;
        k = m + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(predicted: &[bool], truth: &[bool]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "prediction and truth lengths differ");
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}
