use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::model::{LambdaProposal, Likelihood, Model, SamplerConfig};
use super::state::{ChainState, GeneState};
use super::trace::MoveStats;
use super::truncnorm::TruncatedNormal;
use crate::density::{dot, nb_mu_log_ratio, nb_phi_terms, CountLevels, LowRankPrecision};
use crate::error::{Error, Result};

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn gene_error(iteration: usize, gene: usize, source: Error) -> Error {
    Error::Sampler {
        iteration,
        gene,
        source: Box::new(source),
    }
}

/// Log of the beta-binomial prior ratio for flipping one gene's indicator
/// when `p_gamma` of `p` genes are currently spatial.
///
/// Adding: `(a + p_gamma) / (b + p - p_gamma - 1)`.
/// Deleting: `(b + p - p_gamma) / (a + p_gamma - 1)`.
pub fn gamma_prior_log_ratio(p: usize, p_gamma: usize, a_omega: f64, b_omega: f64, add: bool) -> f64 {
    let (p, k) = (p as f64, p_gamma as f64);
    if add {
        (a_omega + k).ln() - (b_omega + p - k - 1.0).ln()
    } else {
        (b_omega + p - k).ln() - (a_omega + k - 1.0).ln()
    }
}

/// Gibbs step for the extra-zero indicators at every zero count.
///
/// The indicator prior is collapsed across genes within a spot, so genes are
/// visited in order. A flip counts as an acceptance.
pub fn update_eta(state: &mut ChainState, model: &Model, cfg: &SamplerConfig) -> MoveStats {
    let hp = &model.hp;
    let p = model.n_genes() as f64;
    let full = cfg.likelihood == Likelihood::Full;
    let mut stats = MoveStats::default();
    for (j, g) in state.genes.iter_mut().enumerate() {
        let y = &model.y[j];
        for i in 0..y.len() {
            if y[i] > 0.0 {
                continue;
            }
            let old = g.eta[i];
            let others = (state.eta_per_spot[i] - old as u32) as f64;
            let log_one = (hp.a_pi + others).ln();
            let mut log_zero = (hp.b_pi + p - 1.0 - others).ln();
            if full {
                let mu = model.s[i] * g.log_lambda[i].exp();
                log_zero += -g.phi * (mu / g.phi).ln_1p();
            }
            let prob_one = 1.0 / (1.0 + (log_zero - log_one).exp());
            let new = g.rng.random::<f64>() < prob_one;
            if new != old {
                stats.accepted += 1;
                g.eta[i] = new;
                if new {
                    state.eta_per_spot[i] += 1;
                } else {
                    state.eta_per_spot[i] -= 1;
                }
            }
            stats.proposed += 1;
        }
    }
    stats
}

/// Random walk on `log phi_j` for every gene.
pub fn update_phi(state: &mut ChainState, model: &Model, cfg: &SamplerConfig) -> MoveStats {
    state
        .genes
        .par_iter_mut()
        .enumerate()
        .map(|(j, g)| phi_step(g, j, model, cfg))
        .reduce(MoveStats::default, MoveStats::merge)
}

pub(crate) fn phi_log_ratio(
    data: Option<(&CountLevels, &[f64], &[f64], &[bool])>,
    phi: f64,
    phi_new: f64,
    a_phi: f64,
    b_phi: f64,
) -> f64 {
    let lik = match data {
        Some((levels, y, mu, eta)) => {
            nb_phi_terms(levels, y, mu, eta, phi_new) - nb_phi_terms(levels, y, mu, eta, phi)
        }
        None => 0.0,
    };
    let log_step = phi_new.ln() - phi.ln();
    // gamma prior ratio plus the Jacobian of the log-scale walk
    lik + (a_phi - 1.0) * log_step - b_phi * (phi_new - phi) + log_step
}

fn phi_step(g: &mut GeneState, j: usize, model: &Model, cfg: &SamplerConfig) -> MoveStats {
    let hp = &model.hp;
    let z: f64 = g.rng.sample(StandardNormal);
    let phi_new = (g.phi.ln() + hp.tau_phi * z).exp();
    if !(phi_new > 0.0 && phi_new.is_finite()) {
        return MoveStats::rejected();
    }
    let log_r = if cfg.likelihood == Likelihood::Full {
        let mu = model.mean(&g.log_lambda);
        phi_log_ratio(
            Some((&model.levels[j], &model.y[j], &mu, &g.eta)),
            g.phi,
            phi_new,
            hp.a_phi,
            hp.b_phi,
        )
    } else {
        phi_log_ratio(None, g.phi, phi_new, hp.a_phi, hp.b_phi)
    };
    if accept(&mut g.rng, log_r) {
        g.phi = phi_new;
        MoveStats::accepted()
    } else {
        MoveStats::rejected()
    }
}

/// Single-site random walk on every `lambda_ij`.
pub fn update_lambda(state: &mut ChainState, model: &Model, cfg: &SamplerConfig) -> MoveStats {
    state
        .genes
        .par_iter_mut()
        .enumerate()
        .map(|(j, g)| lambda_sweep(g, j, model, cfg))
        .reduce(MoveStats::default, MoveStats::merge)
}

/// Keeps `u = M^{-1} v` available during a single-site sweep over `v`.
enum Tracker<'a> {
    Dense { precision: &'a faer::Mat<f64>, u: Vec<f64> },
    /// `wz = W X^T v` for `M^{-1} = I - X W X^T`.
    LowRank { lr: &'a LowRankPrecision, wz: Vec<f64> },
}

impl<'a> Tracker<'a> {
    fn new(factor: &'a crate::density::MvtFactor, v: &[f64]) -> Self {
        match factor.low_rank() {
            Some(lr) => {
                let mut wz = vec![0.0; lr.rank()];
                for (i, &vi) in v.iter().enumerate() {
                    for (a, &b) in wz.iter_mut().zip(lr.xw_row(i)) {
                        *a += vi * b;
                    }
                }
                Tracker::LowRank { lr, wz }
            }
            None => {
                let precision = factor.precision();
                let mut u = vec![0.0; v.len()];
                for (k, &vk) in v.iter().enumerate() {
                    for (ui, &pik) in u.iter_mut().zip(precision.col_as_slice(k)) {
                        *ui += pik * vk;
                    }
                }
                Tracker::Dense { precision, u }
            }
        }
    }

    fn quad(&self, v: &[f64]) -> f64 {
        match self {
            Tracker::Dense { u, .. } => dot(v, u),
            Tracker::LowRank { lr, wz } => {
                let vv = dot(v, v);
                let mut xtv = vec![0.0; lr.rank()];
                for (i, &vi) in v.iter().enumerate() {
                    for (a, &b) in xtv.iter_mut().zip(lr.x_row(i)) {
                        *a += vi * b;
                    }
                }
                vv - dot(&xtv, wz)
            }
        }
    }

    /// `(u_i, P_ii)`.
    #[inline]
    fn site(&self, i: usize, v: &[f64]) -> (f64, f64) {
        match self {
            Tracker::Dense { precision, u } => (u[i], precision[(i, i)]),
            Tracker::LowRank { lr, wz } => (v[i] - dot(lr.x_row(i), wz), lr.diag(i)),
        }
    }

    /// Account for `v_i += delta`.
    #[inline]
    fn shift(&mut self, i: usize, delta: f64) {
        match self {
            Tracker::Dense { precision, u } => {
                for (uk, &pki) in u.iter_mut().zip(precision.col_as_slice(i)) {
                    *uk += delta * pki;
                }
            }
            Tracker::LowRank { lr, wz } => {
                for (a, &b) in wz.iter_mut().zip(lr.xw_row(i)) {
                    *a += delta * b;
                }
            }
        }
    }
}

fn lambda_sweep(g: &mut GeneState, j: usize, model: &Model, cfg: &SamplerConfig) -> MoveStats {
    let n = g.log_lambda.len();
    let mut tracker = Tracker::new(&g.factor, &g.log_lambda);
    let v = &mut g.log_lambda;
    let mut q = tracker.quad(v);
    let y = &model.y[j];
    let tau = model.tau_lambda[j];
    let full = cfg.likelihood == Likelihood::Full;
    let mut stats = MoveStats::default();
    for i in 0..n {
        stats.proposed += 1;
        let z: f64 = g.rng.sample(StandardNormal);
        let lam = v[i].exp();
        let (v_new, lam_new, log_jac) = match cfg.lambda_proposal {
            LambdaProposal::Natural => {
                let lam_new = lam + tau * z;
                if lam_new <= 0.0 {
                    continue;
                }
                let v_new = lam_new.ln();
                (v_new, lam_new, v[i] - v_new)
            }
            LambdaProposal::Log => {
                let v_new = v[i] + tau * z;
                (v_new, v_new.exp(), 0.0)
            }
        };
        let delta = v_new - v[i];
        let (u_i, p_ii) = tracker.site(i, v);
        let q_new = q + 2.0 * delta * u_i + delta * delta * p_ii;
        let mut log_r = model.norm.log_ratio_quad(q, q_new) + log_jac;
        if full && !g.eta[i] {
            let s = model.s[i];
            log_r += nb_mu_log_ratio(y[i], s * lam, s * lam_new, delta, g.phi);
        }
        if accept(&mut g.rng, log_r) {
            stats.accepted += 1;
            v[i] = v_new;
            q = q_new;
            tracker.shift(i, delta);
        }
    }
    g.quad = q;
    stats
}

/// Add/delete move on one uniformly chosen gene's `(gamma_j, l_j)`.
///
/// Returns `(add, delete)` statistics.
pub fn update_gamma_l_joint(
    state: &mut ChainState,
    model: &Model,
    _cfg: &SamplerConfig,
) -> Result<(MoveStats, MoveStats)> {
    let hp = &model.hp;
    let p = model.n_genes();
    let p_gamma = state.n_spatial();
    let iteration = state.iteration;
    let rng = &mut state.chain_rng;
    let j = rng.random_range(0..p);
    let g = &mut state.genes[j];
    let bounds = model.bounds;
    let (lo, hi) = (bounds.l_lower(), bounds.l_upper());
    let add_proposal = TruncatedNormal {
        mean: lo.ln(),
        sd: 10.0 * model.tau_l,
        lo: lo.ln(),
        hi: hi.ln(),
    };
    let current = model.norm.log_density(g.factor.log_det(), g.quad);
    match g.l {
        None => {
            let x = add_proposal.sample(rng);
            let l_new = x.exp().clamp(lo, hi);
            let f = model.factor(l_new).map_err(|e| gene_error(iteration, j, e))?;
            let q = f.quad_form(&g.log_lambda);
            let log_r = gamma_prior_log_ratio(p, p_gamma, hp.a_omega, hp.b_omega, true)
                + model.norm.log_density(f.log_det(), q)
                - current
                + hp.l_prior.log_density(l_new, &bounds)
                + l_new.ln()
                - add_proposal.log_pdf(x);
            if accept(rng, log_r) {
                g.l = Some(l_new);
                g.factor = f;
                g.quad = q;
                Ok((MoveStats::accepted(), MoveStats::default()))
            } else {
                Ok((MoveStats::rejected(), MoveStats::default()))
            }
        }
        Some(l) => {
            let f = model.nonspatial.clone();
            let q = f.quad_form(&g.log_lambda);
            let log_r = gamma_prior_log_ratio(p, p_gamma, hp.a_omega, hp.b_omega, false)
                + model.norm.log_density(f.log_det(), q)
                - current
                - hp.l_prior.log_density(l, &bounds)
                - l.ln()
                + add_proposal.log_pdf(l.ln());
            if accept(rng, log_r) {
                g.l = None;
                g.factor = f;
                g.quad = q;
                Ok((MoveStats::default(), MoveStats::accepted()))
            } else {
                Ok((MoveStats::default(), MoveStats::rejected()))
            }
        }
    }
}

/// Truncated log-normal random walk on `l_j` for every spatial gene.
pub fn update_l_within(state: &mut ChainState, model: &Model, _cfg: &SamplerConfig) -> Result<MoveStats> {
    let iteration = state.iteration;
    state
        .genes
        .par_iter_mut()
        .enumerate()
        .filter(|(_, g)| g.l.is_some())
        .map(|(j, g)| l_step(g, model).map_err(|e| gene_error(iteration, j, e)))
        .try_reduce(MoveStats::default, |a, b| Ok(a.merge(b)))
}

fn l_step(g: &mut GeneState, model: &Model) -> Result<MoveStats> {
    let l = g.l.expect("spatial gene");
    let bounds = model.bounds;
    let (lo, hi) = (bounds.l_lower().ln(), bounds.l_upper().ln());
    let x = l.ln();
    let forward = TruncatedNormal {
        mean: x,
        sd: model.tau_l,
        lo,
        hi,
    };
    let x_new = forward.sample(&mut g.rng);
    let l_new = x_new.exp().clamp(bounds.l_lower(), bounds.l_upper());
    let backward = TruncatedNormal { mean: x_new, ..forward };
    let f = model.factor(l_new)?;
    let q = f.quad_form(&g.log_lambda);
    let prior = &model.hp.l_prior;
    let log_r = model.norm.log_density(f.log_det(), q) - model.norm.log_density(g.factor.log_det(), g.quad)
        + prior.log_density(l_new, &bounds)
        - prior.log_density(l, &bounds)
        + (x_new - x)
        + backward.log_pdf(x)
        - forward.log_pdf(x_new);
    if accept(&mut g.rng, log_r) {
        g.l = Some(l_new);
        g.factor = f;
        g.quad = q;
        Ok(MoveStats::accepted())
    } else {
        Ok(MoveStats::rejected())
    }
}
