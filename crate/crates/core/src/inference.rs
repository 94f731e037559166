//! Posterior summaries and gene selection from pooled chain traces.

use std::io::Write;
use std::path::Path;

use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::mcmc::ChainTrace;

/// Per-gene posterior summary.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneResult {
    pub gene_id: String,
    pub ppi: f64,
    pub bayes_factor: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub selected: bool,
    /// Mean of `l` over iterations where the gene is spatial.
    pub posterior_mean_l: Option<f64>,
    pub posterior_mean_phi: f64,
}

fn check(traces: &[ChainTrace]) -> Result<usize> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Validation("no chain traces supplied".into()))?;
    let p = first.n_genes();
    if traces.iter().any(|t| t.gene_ids != first.gene_ids) {
        return Err(Error::Validation("chain traces cover different genes".into()));
    }
    let total: usize = traces.iter().map(|t| t.post_burn_in().len()).sum();
    if total == 0 {
        return Err(Error::Validation("traces have no post-burn-in iterations".into()));
    }
    Ok(p)
}

/// Pooled post-burn-in iterations as `(trace, iteration)` pairs, chain by chain.
fn pooled(traces: &[ChainTrace]) -> impl Iterator<Item = (&ChainTrace, usize)> {
    traces.iter().flat_map(|t| t.post_burn_in().map(move |u| (t, u)))
}

/// Fraction of pooled post-burn-in iterations with `gamma_j = 1`.
pub fn compute_ppi(traces: &[ChainTrace]) -> Result<Vec<f64>> {
    let p = check(traces)?;
    let mut hits = vec![0u64; p];
    let mut total = 0u64;
    for (t, u) in pooled(traces) {
        let row = &t.gamma[t.idx(u, 0)..t.idx(u, 0) + p];
        for (h, &g) in hits.iter_mut().zip(row) {
            *h += g as u64;
        }
        total += 1;
    }
    Ok(hits.into_iter().map(|h| h as f64 / total as f64).collect())
}

/// Indicator vector of the visited iteration with the largest joint log
/// posterior; the earliest such iteration wins ties.
pub fn map_estimate(traces: &[ChainTrace]) -> Result<Vec<bool>> {
    let p = check(traces)?;
    let mut best: Option<(f64, &ChainTrace, usize)> = None;
    for (t, u) in pooled(traces) {
        let lp = t.log_posterior(u);
        if lp.is_nan() {
            return Err(Error::NonFinite("stored log posterior"));
        }
        if best.is_none_or(|(b, _, _)| lp > b) {
            best = Some((lp, t, u));
        }
    }
    let (_, t, u) = best.expect("checked non-empty");
    Ok(t.gamma[t.idx(u, 0)..t.idx(u, 0) + p].to_vec())
}

/// `sum (1 - PPI_j) 1{1 - PPI_j < c} / sum 1{1 - PPI_j < c}`; zero when no
/// gene passes.
pub fn bayesian_fdr(ppi: &[f64], c: f64) -> f64 {
    let (num, den) = ppi
        .iter()
        .map(|&q| 1.0 - q)
        .filter(|&r| r < c)
        .fold((0.0, 0usize), |(s, k), r| (s + r, k + 1));
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Largest threshold `c` in `{1 - PPI_j} ∪ {1}` with Bayesian FDR at most
/// `alpha`, and the genes it selects.
pub fn bfdr_threshold(ppi: &[f64], alpha: f64) -> (f64, Vec<bool>) {
    let mut candidates: Vec<f64> = ppi.iter().map(|&q| 1.0 - q).collect();
    candidates.push(1.0);
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let c = candidates
        .into_iter()
        .find(|&c| bayesian_fdr(ppi, c) <= alpha)
        .unwrap_or(0.0);
    (c, ppi.iter().map(|&q| 1.0 - q < c).collect())
}

/// Bayes factor and likelihood-ratio p-value of one gene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrTest {
    pub log_bayes_factor: f64,
    /// `max(0, 2 log BF)`.
    pub statistic: f64,
    pub p_value: f64,
}

/// Upper tail of chi-square with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(0.5, x / 2.0).clamp(0.0, 1.0)
    }
}

/// Bayes factor as the pooled mean of per-iteration spatial over non-spatial
/// density ratios, referred to a chi-square(1) at `2 log BF`.
pub fn lr_pvalue(traces: &[ChainTrace]) -> Result<Vec<LrTest>> {
    let p = check(traces)?;
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let d: Vec<f64> = pooled(traces)
            .map(|(t, u)| t.log_mvt_spatial[t.idx(u, j)] - t.log_mvt_nonspatial[t.idx(u, j)])
            .collect();
        if d.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("stored log-density"));
        }
        let log_bf = log_mean_exp(&d);
        let statistic = (2.0 * log_bf).max(0.0);
        out.push(LrTest {
            log_bayes_factor: log_bf,
            statistic,
            p_value: chi2_1_sf(statistic),
        });
    }
    Ok(out)
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// Benjamini-Hochberg step-up adjustment.
pub fn bh_adjust(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(pvals[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    adjusted
}

/// Combined rule: BH-adjusted p-value below `alpha` and PPI at least `ppi_cutoff`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRule {
    pub alpha: f64,
    pub ppi_cutoff: f64,
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule {
            alpha: 0.05,
            ppi_cutoff: 0.5,
        }
    }
}

impl SelectionRule {
    pub fn selects(&self, p_adjusted: f64, ppi: f64) -> bool {
        p_adjusted < self.alpha && ppi >= self.ppi_cutoff
    }
}

/// Per-gene results, sorted by PPI descending then gene id.
pub fn summarize(traces: &[ChainTrace], rule: SelectionRule) -> Result<Vec<GeneResult>> {
    let p = check(traces)?;
    let ppi = compute_ppi(traces)?;
    let lr = lr_pvalue(traces)?;
    let p_values: Vec<f64> = lr.iter().map(|t| t.p_value).collect();
    let adjusted = bh_adjust(&p_values);
    let mut l_sum = vec![0.0; p];
    let mut l_n = vec![0usize; p];
    let mut phi_sum = vec![0.0; p];
    let mut total = 0usize;
    for (t, u) in pooled(traces) {
        for j in 0..p {
            let k = t.idx(u, j);
            if t.gamma[k] {
                l_sum[j] += t.l[k];
                l_n[j] += 1;
            }
            phi_sum[j] += t.phi[k];
        }
        total += 1;
    }
    let ids = &traces[0].gene_ids;
    let mut rows: Vec<GeneResult> = (0..p)
        .map(|j| GeneResult {
            gene_id: ids[j].clone(),
            ppi: ppi[j],
            bayes_factor: lr[j].log_bayes_factor.exp(),
            p_value: p_values[j],
            p_adjusted: adjusted[j],
            selected: rule.selects(adjusted[j], ppi[j]),
            posterior_mean_l: (l_n[j] > 0).then(|| l_sum[j] / l_n[j] as f64),
            posterior_mean_phi: phi_sum[j] / total as f64,
        })
        .collect();
    sort_results(&mut rows);
    Ok(rows)
}

pub fn sort_results(rows: &mut [GeneResult]) {
    rows.sort_by(|a, b| b.ppi.total_cmp(&a.ppi).then_with(|| a.gene_id.cmp(&b.gene_id)));
}

pub const RESULT_COLUMNS: [&str; 8] = [
    "gene_id",
    "ppi",
    "bayes_factor",
    "p_value",
    "p_adjusted",
    "selected",
    "posterior_mean_l",
    "posterior_mean_phi",
];

/// Tab-separated results table; an absent length-scale is written as `NA`.
pub fn write_results(path: impl AsRef<Path>, rows: &[GeneResult]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&RESULT_COLUMNS.join("\t"));
    out.push('\n');
    for r in rows {
        let l = r.posterior_mean_l.map_or("NA".to_string(), |l| l.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.gene_id, r.ppi, r.bayes_factor, r.p_value, r.p_adjusted, r.selected, l, r.posterior_mean_phi
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_with_gamma(burn_in: usize, gamma: &[&[bool]]) -> ChainTrace {
        let p = gamma[0].len();
        let mut t = ChainTrace::new(0, 0, burn_in, 1, (0..p).map(|j| format!("g{j}")).collect(), vec!["a".into(), "b".into()]);
        for row in gamma {
            t.gamma.extend_from_slice(row);
            for &g in row.iter() {
                t.l.push(if g { 2.0 } else { f64::NAN });
                t.phi.push(1.0);
                t.log_mvt_spatial.push(0.0);
                t.log_mvt_nonspatial.push(0.0);
            }
            t.log_likelihood.push(0.0);
            t.log_prior_lambda.push(0.0);
            t.log_prior_gamma.push(0.0);
        }
        t
    }

    #[test]
    fn ppi_always_and_alternating() {
        let rows: Vec<[bool; 2]> = (0..10).map(|u| [true, u % 2 == 0]).collect();
        let refs: Vec<&[bool]> = rows.iter().map(|r| &r[..]).collect();
        let t = trace_with_gamma(0, &refs);
        assert_eq!(compute_ppi(&[t]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn ppi_pools_unequal_hits() {
        let a: Vec<&[bool]> = (0..100).map(|u| if u < 30 { &[true][..] } else { &[false][..] }).collect();
        let b: Vec<&[bool]> = (0..100).map(|u| if u < 50 { &[true][..] } else { &[false][..] }).collect();
        let ppi = compute_ppi(&[trace_with_gamma(0, &a), trace_with_gamma(0, &b)]).unwrap();
        assert!((ppi[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_post_burn_in_is_an_error() {
        let t = trace_with_gamma(5, &[&[true], &[false]]);
        assert!(compute_ppi(&[t]).is_err());
        assert!(compute_ppi(&[]).is_err());
    }

    #[test]
    fn map_ties_pick_earliest() {
        let mut t = trace_with_gamma(0, &[&[false, false], &[true, false], &[false, true]]);
        t.log_likelihood = vec![-5.0, -1.0, -1.0];
        assert_eq!(map_estimate(&[t]).unwrap(), vec![true, false]);
        let single = trace_with_gamma(0, &[&[false, true]]);
        assert_eq!(map_estimate(&[single]).unwrap(), vec![false, true]);
    }

    #[test]
    fn fdr_example() {
        assert!((bayesian_fdr(&[0.9, 0.8, 0.2], 0.25) - 0.15).abs() < 1e-15);
        let (c, sel) = bfdr_threshold(&[1.0, 1.0, 1.0], 0.05);
        assert_eq!(c, 1.0);
        assert!(sel.iter().all(|&s| s));
        let (_, sel) = bfdr_threshold(&[0.99, 0.97, 0.2, 0.0], 0.05);
        assert_eq!(sel, vec![true, true, false, false]);
    }

    #[test]
    fn chi_square_quantile() {
        let got = chi2_1_sf(3.841458820694124);
        assert!((got - 0.05).abs() < 1e-12, "{got}");
        assert_eq!(chi2_1_sf(0.0), 1.0);
    }

    #[test]
    fn equal_densities_give_unit_bayes_factor() {
        let t = trace_with_gamma(0, &[&[true], &[false]]);
        let lr = lr_pvalue(&[t]).unwrap();
        assert_eq!(lr[0].log_bayes_factor, 0.0);
        assert_eq!(lr[0].p_value, 1.0);
    }

    #[test]
    fn bh_cases() {
        assert_eq!(bh_adjust(&[1.0, 1.0]), vec![1.0, 1.0]);
        let adj = bh_adjust(&[0.01, 0.02, 0.03]);
        for a in adj {
            assert!((a - 0.03).abs() < 1e-15);
        }
        assert_eq!(bh_adjust(&[0.2]), vec![0.2]);
    }

    #[test]
    fn combined_rule() {
        let rule = SelectionRule::default();
        assert!(rule.selects(0.001, 0.9));
        assert!(!rule.selects(0.2, 0.9));
        assert!(!rule.selects(0.001, 0.3));
    }
}
