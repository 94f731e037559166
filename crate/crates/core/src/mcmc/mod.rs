//! Posterior sampler over `(H, phi, Lambda, gamma, l)`.
//!
//! One iteration runs, in order: extra-zero indicators, dispersions,
//! normalized expression, the add/delete move on `(gamma_j, l_j)` and the
//! within-model length-scale step. Gene-level steps run in parallel, each
//! gene drawing from its own random stream.

mod chain;
mod model;
mod state;
pub mod trace;
mod truncnorm;
mod updates;

pub use chain::{run_chain, run_multichain};
pub use model::{Hyperparameters, LambdaProposal, LengthScalePrior, Likelihood, Model, SamplerConfig};
pub use state::{init_state, ChainState};
pub use trace::{read_trace, write_trace, AcceptanceCounters, ChainTrace, MoveStats, TRACE_VERSION};
pub use updates::{
    gamma_prior_log_ratio, update_eta, update_gamma_l_joint, update_l_within, update_lambda,
    update_phi,
};
