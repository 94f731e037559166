use std::sync::Arc;

use rand_distr::{Bernoulli, Distribution, Gamma};

use super::model::Model;
use crate::density::MvtFactor;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng, CHAIN_STREAM};

/// Per-gene slice of the chain state.
pub(crate) struct GeneState {
    pub phi: f64,
    pub log_lambda: Vec<f64>,
    pub eta: Vec<bool>,
    /// `Some(l)` iff the gene is currently spatial.
    pub l: Option<f64>,
    /// Factor of the current branch's scale matrix.
    pub factor: Arc<MvtFactor>,
    /// `v^T M^{-1} v` for the current `log_lambda` and `factor`.
    pub quad: f64,
    pub rng: StreamRng,
}

/// Current values of `(H, phi, Lambda, gamma, l)` for one chain.
pub struct ChainState {
    pub(crate) genes: Vec<GeneState>,
    /// Number of genes with `eta = 1`, per spot.
    pub(crate) eta_per_spot: Vec<u32>,
    pub(crate) chain_rng: StreamRng,
    pub(crate) iteration: usize,
}

impl ChainState {
    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn eta(&self, spot: usize, gene: usize) -> bool {
        self.genes[gene].eta[spot]
    }

    pub fn phi(&self, gene: usize) -> f64 {
        self.genes[gene].phi
    }

    pub fn log_lambda(&self, gene: usize) -> &[f64] {
        &self.genes[gene].log_lambda
    }

    pub fn gamma(&self, gene: usize) -> bool {
        self.genes[gene].l.is_some()
    }

    pub fn length_scale(&self, gene: usize) -> Option<f64> {
        self.genes[gene].l
    }

    pub fn n_spatial(&self) -> usize {
        self.genes.iter().filter(|g| g.l.is_some()).count()
    }

    /// Overwrite gene `j`'s log expression, keeping cached quantities in sync.
    pub fn set_log_lambda(&mut self, gene: usize, values: &[f64]) {
        let g = &mut self.genes[gene];
        g.log_lambda.copy_from_slice(values);
        g.quad = g.factor.quad_form(&g.log_lambda);
    }

    /// Overwrite gene `j`'s extra-zero indicators. Indicators may only be set
    /// at zero counts.
    pub fn set_eta(&mut self, model: &Model, gene: usize, eta: &[bool]) -> Result<()> {
        if eta.len() != model.n_spots() {
            return Err(Error::Validation(format!("{} indicators for {} spots", eta.len(), model.n_spots())));
        }
        if let Some(i) = (0..eta.len()).find(|&i| eta[i] && model.y[gene][i] > 0.0) {
            return Err(Error::Validation(format!("spot {i} has a positive count and cannot be an extra zero")));
        }
        let g = &mut self.genes[gene];
        for (i, (&new, old)) in eta.iter().zip(g.eta.iter_mut()).enumerate() {
            self.eta_per_spot[i] = self.eta_per_spot[i] + new as u32 - *old as u32;
            *old = new;
        }
        Ok(())
    }

    /// Make gene `j` spatial with length-scale `l`, or non-spatial with `None`.
    pub fn set_length_scale(&mut self, model: &Model, gene: usize, l: Option<f64>) -> Result<()> {
        let factor = match l {
            Some(l) => {
                let b = model.bounds;
                if !(l >= b.l_lower() && l <= b.l_upper()) {
                    return Err(Error::Validation(format!(
                        "length-scale {l} outside [{}, {}]",
                        b.l_lower(),
                        b.l_upper()
                    )));
                }
                model.factor(l)?
            }
            None => model.nonspatial.clone(),
        };
        let g = &mut self.genes[gene];
        g.quad = factor.quad_form(&g.log_lambda);
        g.factor = factor;
        g.l = l;
        Ok(())
    }

    pub fn set_phi(&mut self, gene: usize, phi: f64) {
        self.genes[gene].phi = phi;
    }
}

/// Starting state: every gene non-spatial, `phi` from its prior clamped to
/// `[1e-3, 1e3]`, extra-zero indicators from their prior mean at zero counts,
/// and log expression from the observed counts.
pub fn init_state(model: &Model, seed: u64) -> ChainState {
    let hp = &model.hp;
    let n = model.n_spots();
    let phi_prior = Gamma::new(hp.a_phi, 1.0 / hp.b_phi).expect("validated hyperparameters");
    let eta_prior = Bernoulli::new(hp.a_pi / (hp.a_pi + hp.b_pi)).expect("probability in [0, 1]");
    let mut eta_per_spot = vec![0u32; n];
    let genes = model
        .y
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let mut rng = stream(seed, j as u64);
            let phi = phi_prior.sample(&mut rng).clamp(1e-3, 1e3);
            let eta: Vec<bool> = y
                .iter()
                .map(|&c| c == 0.0 && eta_prior.sample(&mut rng))
                .collect();
            for (i, &e) in eta.iter().enumerate() {
                eta_per_spot[i] += e as u32;
            }
            let log_lambda = initial_log_lambda(y, &model.s);
            let factor = model.nonspatial.clone();
            let quad = factor.quad_form(&log_lambda);
            GeneState {
                phi,
                log_lambda,
                eta,
                l: None,
                factor,
                quad,
                rng,
            }
        })
        .collect();
    ChainState {
        genes,
        eta_per_spot,
        chain_rng: stream(seed, CHAIN_STREAM),
        iteration: 0,
    }
}

/// `log((y + 0.5) / s)` at positive counts, their mean at zero counts.
pub(crate) fn initial_log_lambda(y: &[f64], s: &[f64]) -> Vec<f64> {
    let observed: Vec<f64> = y
        .iter()
        .zip(s)
        .filter(|(&y, _)| y > 0.0)
        .map(|(&y, &s)| ((y + 0.5) / s).ln())
        .collect();
    let fill = (!observed.is_empty()).then(|| observed.iter().sum::<f64>() / observed.len() as f64);
    y.iter()
        .zip(s)
        .map(|(&y, &s)| {
            if y > 0.0 {
                ((y + 0.5) / s).ln()
            } else {
                fill.unwrap_or_else(|| (0.5 / s).ln())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_values_follow_counts() {
        let v = initial_log_lambda(&[5.0, 0.0, 1.0], &[1.0, 1.0, 2.0]);
        assert!((v[0] - 5.5f64.ln()).abs() < 1e-15);
        assert!((v[2] - 0.75f64.ln()).abs() < 1e-15);
        assert!((v[1] - (5.5f64.ln() + 0.75f64.ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_gene_falls_back() {
        let v = initial_log_lambda(&[0.0, 0.0], &[1.0, 0.5]);
        assert_eq!(v, vec![0.5f64.ln(), 1.0f64.ln()]);
    }
}
