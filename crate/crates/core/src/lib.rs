//! Bayesian detection of spatially variable (SV) genes in spatial molecular
//! profiling count data.
//!
//! Counts are modelled with a zero-inflated negative binomial observation
//! layer whose log normalized expression follows, per gene, either a
//! Gaussian process with a squared-exponential kernel (SV genes) or white
//! noise (non-SV genes). Regression coefficients and the GP scale are
//! integrated out, leaving multivariate-t marginals, and the SV indicators,
//! length-scales, dispersions, expression levels and extra-zero indicators
//! are explored with a Metropolis-within-Gibbs sampler.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: count and coordinate ingestion, filtering, size factors.
//! * [`kernel`] and [`density`]: distances, SE kernels, NB and MVT log-densities.
//! * [`mcmc`]: sampler state, update steps, chains and traces.
//! * [`inference`]: PPI, MAP, Bayesian FDR, Bayes-factor p-values, BH.
//! * [`simulate`]: synthetic lattice datasets and AUC/MCC metrics.
//! * [`diagnostics`]: Moran's I and multi-chain health.

pub mod data;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod mcmc;
pub mod rng;
pub mod simulate;

pub use data::{CountMatrix, DesignMatrix, SizeFactors, SpatialCoords};
pub use density::{log_mvt_marginal, log_nb_pmf, Branch, MvtSpec};
pub use error::{Error, ErrorCategory, Result};
pub use inference::GeneResult;
pub use kernel::{DistanceBounds, KernelMatrix};
pub use mcmc::{ChainState, ChainTrace, Hyperparameters, LambdaProposal, LengthScalePrior, Likelihood, Model, SamplerConfig};
