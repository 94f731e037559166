use rayon::prelude::*;
use statrs::function::beta::ln_beta;

use super::model::{Likelihood, Model, SamplerConfig};
use super::state::{init_state, ChainState};
use super::trace::{AcceptanceCounters, ChainTrace, Snapshot};
use super::updates::{update_eta, update_gamma_l_joint, update_l_within, update_lambda, update_phi};
use crate::density::{nb_gene_loglik, MvtFactor};
use crate::error::{Error, Result};

/// Run one chain from its seed.
///
/// Identical `(model, cfg, seed)` give bit-identical traces regardless of the
/// number of worker threads.
pub fn run_chain(model: &Model, cfg: &SamplerConfig, chain: usize, seed: u64) -> Result<ChainTrace> {
    cfg.validate()?;
    let reference_l = cfg.bf_reference_l.unwrap_or(model.bounds.l_lower());
    let reference = model.factor(reference_l)?;
    let mut state = init_state(model, seed);
    let p = model.n_genes();
    let mut trace = ChainTrace::new(
        chain,
        seed,
        cfg.burn_in(),
        cfg.thin,
        model.gene_ids.clone(),
        model.spot_ids.clone(),
    );
    for v in [&mut trace.l, &mut trace.phi, &mut trace.log_mvt_spatial, &mut trace.log_mvt_nonspatial] {
        v.reserve(cfg.n_iter * p);
    }
    trace.gamma.reserve(cfg.n_iter * p);
    let mut acc = AcceptanceCounters::default();
    for it in 0..cfg.n_iter {
        state.iteration = it;
        acc.eta = acc.eta.merge(update_eta(&mut state, model, cfg));
        acc.phi = acc.phi.merge(update_phi(&mut state, model, cfg));
        acc.lambda = acc.lambda.merge(update_lambda(&mut state, model, cfg));
        let (add, delete) = update_gamma_l_joint(&mut state, model, cfg)?;
        acc.add = acc.add.merge(add);
        acc.delete = acc.delete.merge(delete);
        acc.l_within = acc.l_within.merge(update_l_within(&mut state, model, cfg)?);
        record(&state, model, cfg, &reference, &mut trace);
        if it >= trace.burn_in && (it - trace.burn_in) % cfg.thin == 0 {
            trace.snapshots.push(Snapshot {
                iteration: it,
                log_lambda: state.genes.iter().flat_map(|g| g.log_lambda.iter().copied()).collect(),
            });
        }
    }
    state.iteration = cfg.n_iter;
    trace.acceptance = acc;
    for (name, stats) in acc.named() {
        match stats.rate() {
            Some(r) if r <= 0.0 || r >= 1.0 => {
                log::warn!("chain {chain}: {name} acceptance rate {r:.3} is degenerate")
            }
            Some(r) => log::debug!("chain {chain}: {name} acceptance rate {r:.3}"),
            None => {}
        }
    }
    Ok(trace)
}

fn record(state: &ChainState, model: &Model, cfg: &SamplerConfig, reference: &MvtFactor, trace: &mut ChainTrace) {
    let norm = &model.norm;
    let full = cfg.likelihood == Likelihood::Full;
    let rows: Vec<(f64, f64, f64)> = state
        .genes
        .par_iter()
        .enumerate()
        .map(|(j, g)| {
            let current = norm.log_density(g.factor.log_det(), g.quad);
            let (spatial, nonspatial) = match g.l {
                Some(_) => {
                    let q = model.nonspatial.quad_form(&g.log_lambda);
                    (current, norm.log_density(model.nonspatial.log_det(), q))
                }
                None => {
                    let q = reference.quad_form(&g.log_lambda);
                    (norm.log_density(reference.log_det(), q), current)
                }
            };
            let loglik = if full {
                let mu = model.mean(&g.log_lambda);
                nb_gene_loglik(&model.levels[j], &model.y[j], &mu, &g.eta, g.phi)
            } else {
                0.0
            };
            (spatial, nonspatial, loglik)
        })
        .collect();
    let mut loglik = 0.0;
    let mut prior_lambda = 0.0;
    for (g, &(s, ns, ll)) in state.genes.iter().zip(&rows) {
        trace.gamma.push(g.l.is_some());
        trace.l.push(g.l.unwrap_or(f64::NAN));
        trace.phi.push(g.phi);
        trace.log_mvt_spatial.push(s);
        trace.log_mvt_nonspatial.push(ns);
        loglik += ll;
        prior_lambda += if g.l.is_some() { s } else { ns };
    }
    let hp = &model.hp;
    let (p, k) = (model.n_genes() as f64, state.n_spatial() as f64);
    trace.log_likelihood.push(loglik);
    trace.log_prior_lambda.push(prior_lambda);
    trace
        .log_prior_gamma
        .push(ln_beta(hp.a_omega + k, hp.b_omega + p - k) - ln_beta(hp.a_omega, hp.b_omega));
}

/// Independent chains, one per seed, run concurrently.
pub fn run_multichain(model: &Model, cfg: &SamplerConfig, seeds: &[u64]) -> Result<Vec<ChainTrace>> {
    if seeds.is_empty() {
        return Err(Error::Validation("at least one chain is required".into()));
    }
    seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            run_chain(model, cfg, k, seed).map_err(|e| Error::Chain {
                chain: k,
                source: Box::new(e),
            })
        })
        .collect()
}
