use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::data::{CountMatrix, DesignMatrix, SizeFactors, SpatialCoords};
use crate::density::{CountLevels, MvtFactor, MvtNorm};
use crate::error::{Error, Result};
use crate::kernel::{distance_bounds, distance_matrix, DistanceBounds, KernelCache};

/// Prior on a spatial gene's length-scale, supported on `[t_min/2, 2 t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LengthScalePrior {
    Uniform,
    /// Gamma with shape and rate, truncated to the support.
    Gamma { shape: f64, rate: f64 },
}

impl LengthScalePrior {
    pub fn gamma_default() -> Self {
        LengthScalePrior::Gamma {
            shape: 0.001,
            rate: 0.001,
        }
    }

    /// Log-density of `l` (up to a constant shared by every gene).
    pub fn log_density(&self, l: f64, bounds: &DistanceBounds) -> f64 {
        let (lo, hi) = (bounds.l_lower(), bounds.l_upper());
        if l < lo || l > hi {
            return f64::NEG_INFINITY;
        }
        match *self {
            LengthScalePrior::Uniform => -(hi - lo).ln(),
            LengthScalePrior::Gamma { shape, rate } => {
                let mass = gamma_lr(shape, rate * hi) - gamma_lr(shape, rate * lo);
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * l.ln() - rate * l - mass.ln()
            }
        }
    }
}

/// Prior hyperparameters and proposal step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub a_pi: f64,
    pub b_pi: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub a_omega: f64,
    pub b_omega: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub h: f64,
    pub tau_phi: f64,
    /// Fixed λ step for every gene; `None` derives one per gene from the data.
    pub tau_lambda: Option<f64>,
    /// `None` uses 2% of the log length-scale range.
    pub tau_l: Option<f64>,
    pub l_prior: LengthScalePrior,
    /// Require `a_omega + b_omega = 2`.
    pub vague_omega: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            a_pi: 1.0,
            b_pi: 1.0,
            a_phi: 0.001,
            b_phi: 0.001,
            a_omega: 0.1,
            b_omega: 1.9,
            a_sigma: 3.0,
            b_sigma: 1.0,
            h: 10.0,
            tau_phi: 1.0,
            tau_lambda: None,
            tau_l: None,
            l_prior: LengthScalePrior::Uniform,
            vague_omega: true,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a_pi", self.a_pi),
            ("b_pi", self.b_pi),
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
            ("a_omega", self.a_omega),
            ("b_omega", self.b_omega),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("h", self.h),
            ("tau_phi", self.tau_phi),
            ("tau_lambda", self.tau_lambda.unwrap_or(1.0)),
            ("tau_l", self.tau_l.unwrap_or(1.0)),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if let LengthScalePrior::Gamma { shape, rate } = self.l_prior {
            if !(shape > 0.0 && rate > 0.0) {
                return Err(Error::Validation("gamma length-scale prior needs positive shape and rate".into()));
            }
        }
        if self.vague_omega && (self.a_omega + self.b_omega - 2.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "a_omega + b_omega must equal 2, got {}",
                self.a_omega + self.b_omega
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaProposal {
    /// Gaussian random walk on λ; non-positive proposals are rejected.
    Natural,
    /// Gaussian random walk on log λ.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    Full,
    /// Drop every count term; the chain then targets the prior.
    PriorOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in_frac: f64,
    /// Keep a log λ snapshot every `thin` post-burn-in iterations.
    pub thin: usize,
    pub lambda_proposal: LambdaProposal,
    pub likelihood: Likelihood,
    /// Length-scale at which non-spatial iterations evaluate the spatial
    /// density for the Bayes factor; `None` means `t_min / 2`.
    pub bf_reference_l: Option<f64>,
    pub cache_capacity: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 2000,
            burn_in_frac: 0.5,
            thin: 10,
            lambda_proposal: LambdaProposal::Natural,
            likelihood: Likelihood::Full,
            bf_reference_l: None,
            cache_capacity: 64,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter < 2 {
            return Err(Error::Validation(format!("n_iter must be at least 2, got {}", self.n_iter)));
        }
        if !(0.0..1.0).contains(&self.burn_in_frac) {
            return Err(Error::Validation(format!(
                "burn-in fraction must be in [0, 1), got {}",
                self.burn_in_frac
            )));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        ((self.n_iter as f64) * self.burn_in_frac).floor() as usize
    }
}

/// Data and fixed structures shared by every chain of a run.
pub struct Model {
    pub(crate) gene_ids: Vec<String>,
    pub(crate) spot_ids: Vec<String>,
    /// Gene-major copy of the counts.
    pub(crate) y: Vec<Vec<f64>>,
    pub(crate) levels: Vec<CountLevels>,
    pub(crate) s: Vec<f64>,
    pub(crate) design: DesignMatrix,
    pub(crate) bounds: DistanceBounds,
    pub(crate) hp: Hyperparameters,
    pub(crate) norm: MvtNorm,
    pub(crate) nonspatial: Arc<MvtFactor>,
    pub(crate) cache: KernelCache,
    pub(crate) tau_lambda: Vec<f64>,
    pub(crate) tau_l: f64,
}

impl Model {
    pub fn new(
        counts: &CountMatrix,
        coords: &SpatialCoords,
        design: DesignMatrix,
        s: &SizeFactors,
        hp: Hyperparameters,
        cache_capacity: usize,
    ) -> Result<Self> {
        hp.validate()?;
        let n = counts.n_spots();
        if coords.len() != n || s.len() != n || design.n_rows() != n {
            return Err(Error::Validation(format!(
                "dimension mismatch: {n} spots, {} coordinates, {} size factors, {} design rows",
                coords.len(),
                s.len(),
                design.n_rows()
            )));
        }
        if coords.spot_ids() != counts.spot_ids() {
            return Err(Error::Validation("coordinates are not aligned to count spots".into()));
        }
        let distances = distance_matrix(coords);
        let bounds = distance_bounds(&distances)?;
        let y: Vec<Vec<f64>> = (0..counts.n_genes())
            .map(|j| counts.gene_column(j).into_iter().map(f64::from).collect())
            .collect();
        let levels = y.iter().map(|col| CountLevels::new(col)).collect();
        let sv = s.as_slice().to_vec();
        let tau_lambda = match hp.tau_lambda {
            Some(t) => vec![t; y.len()],
            None => y.iter().map(|col| default_tau_lambda(col, &sv)).collect(),
        };
        let tau_l = hp
            .tau_l
            .unwrap_or(0.02 * (bounds.l_upper().ln() - bounds.l_lower().ln()));
        let nonspatial = Arc::new(MvtFactor::nonspatial(&design, hp.h)?);
        let cache = KernelCache::new(&distances, design.clone(), hp.h, cache_capacity);
        Ok(Model {
            gene_ids: counts.gene_ids().to_vec(),
            spot_ids: counts.spot_ids().to_vec(),
            y,
            levels,
            s: sv,
            norm: MvtNorm::new(n, hp.a_sigma, hp.b_sigma),
            design,
            bounds,
            hp,
            nonspatial,
            cache,
            tau_lambda,
            tau_l,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.s.len()
    }

    pub fn n_genes(&self) -> usize {
        self.y.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn spot_ids(&self) -> &[String] {
        &self.spot_ids
    }

    pub fn bounds(&self) -> DistanceBounds {
        self.bounds
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn size_factors(&self) -> &[f64] {
        &self.s
    }

    /// Count of spot `i` for gene `j`.
    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.y[j][i]
    }

    pub fn tau_lambda(&self) -> &[f64] {
        &self.tau_lambda
    }

    pub fn tau_l(&self) -> f64 {
        self.tau_l
    }

    pub fn cache(&self) -> &KernelCache {
        &self.cache
    }

    /// NB means `s_i exp(v_i)`.
    pub(crate) fn mean(&self, log_lambda: &[f64]) -> Vec<f64> {
        log_lambda.iter().zip(&self.s).map(|(v, s)| s * v.exp()).collect()
    }

    pub(crate) fn factor(&self, l: f64) -> Result<Arc<MvtFactor>> {
        self.cache.get(l)
    }
}

/// `0.1 * max(sd(y / s), 0.1)`.
fn default_tau_lambda(y: &[f64], s: &[f64]) -> f64 {
    let n = y.len() as f64;
    let r: Vec<f64> = y.iter().zip(s).map(|(y, s)| y / s).collect();
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    0.1 * var.sqrt().max(0.1)
}
