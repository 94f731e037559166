use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use svgp_core::inference::{
    bayesian_fdr, bfdr_threshold, bh_adjust, chi2_1_sf, compute_ppi, lr_pvalue, map_estimate, summarize, SelectionRule,
};
use svgp_core::ChainTrace;

/// Trace over `p` genes from per-iteration indicator rows and log posteriors.
fn trace(gamma: &[Vec<bool>], log_post: &[f64], burn_in: usize) -> ChainTrace {
    let p = gamma[0].len();
    let ids = (0..p).map(|j| format!("g{j}")).collect();
    let mut t = ChainTrace::new(0, 1, burn_in, 1, ids, vec!["s".into()]);
    for (row, &lp) in gamma.iter().zip(log_post) {
        t.gamma.extend(row);
        t.l.extend(row.iter().map(|&g| if g { 2.0 } else { f64::NAN }));
        t.phi.extend(std::iter::repeat_n(1.0, p));
        t.log_mvt_spatial.extend(std::iter::repeat_n(0.0, p));
        t.log_mvt_nonspatial.extend(std::iter::repeat_n(0.0, p));
        t.log_likelihood.push(lp);
        t.log_prior_lambda.push(0.0);
        t.log_prior_gamma.push(0.0);
    }
    t
}

proptest! {
    #[test]
    fn bh_matches_step_up_definition(p in prop::collection::vec(0.0..1.0f64, 1..40)) {
        let m = p.len();
        let adj = bh_adjust(&p);
        let mut sorted = p.clone();
        sorted.sort_by(f64::total_cmp);
        for i in 0..m {
            let rank = sorted.iter().filter(|&&q| q < p[i]).count();
            let expected = (rank..m).map(|k| sorted[k] * m as f64 / (k + 1) as f64).fold(1.0f64, f64::min);
            prop_assert!((adj[i] - expected).abs() < 1e-12);
            prop_assert!(adj[i] >= p[i] - 1e-15);
        }
    }

    #[test]
    fn bfdr_threshold_is_largest_admissible(ppi in prop::collection::vec(0.0..=1.0f64, 1..40), alpha in 0.01..0.3f64) {
        let (c, selected) = bfdr_threshold(&ppi, alpha);
        prop_assert!(bayesian_fdr(&ppi, c) <= alpha);
        for &q in &ppi {
            let cand = 1.0 - q;
            if cand > c {
                prop_assert!(bayesian_fdr(&ppi, cand) > alpha);
            }
        }
        prop_assert!(1.0 > c || bayesian_fdr(&ppi, 1.0) <= alpha);
        for (s, q) in selected.iter().zip(&ppi) {
            prop_assert_eq!(*s, 1.0 - q < c);
        }
    }

    #[test]
    fn chi2_tail_matches_reference(x in 0.0..60.0f64) {
        let reference = 1.0 - ChiSquared::new(1.0).unwrap().cdf(x);
        prop_assert!((chi2_1_sf(x) - reference).abs() < 1e-12);
    }
}

#[test]
fn ppi_pools_post_burn_in_iterations() {
    let a = trace(&[vec![true, true], vec![false, true], vec![true, false], vec![true, false]], &[0.0; 4], 1);
    let b = trace(&[vec![false, false], vec![false, true]], &[0.0; 2], 0);
    let ppi = compute_ppi(&[a, b]).unwrap();
    assert_eq!(ppi, vec![2.0 / 5.0, 2.0 / 5.0]);
}

#[test]
fn map_takes_earliest_maximum_after_burn_in() {
    let rows = vec![vec![true, true], vec![false, true], vec![true, false], vec![false, false]];
    let t = trace(&rows, &[10.0, 3.0, 5.0, 5.0], 1);
    assert_eq!(map_estimate(&[t]).unwrap(), vec![true, false]);
}

#[test]
fn bayes_factor_averages_density_ratios() {
    let mut t = trace(&[vec![false], vec![false]], &[0.0; 2], 0);
    t.log_mvt_spatial = vec![(3.0f64).ln(), 0.0];
    let lr = lr_pvalue(&[t]).unwrap();
    assert!((lr[0].log_bayes_factor - 2.0f64.ln()).abs() < 1e-12);
    assert!((lr[0].statistic - 2.0 * 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn negative_log_bayes_factor_gives_unit_p_value() {
    let mut t = trace(&[vec![false]], &[0.0], 0);
    t.log_mvt_spatial = vec![-4.0];
    assert_eq!(lr_pvalue(&[t]).unwrap()[0].p_value, 1.0);
}

#[test]
fn summary_is_sorted_and_applies_combined_rule() {
    let rows = vec![vec![true, false, true]; 4];
    let mut t = trace(&rows, &[0.0; 4], 0);
    for u in 0..4 {
        t.log_mvt_spatial[u * 3] = 20.0;
        t.log_mvt_spatial[u * 3 + 1] = 20.0;
    }
    let out = summarize(&[t], SelectionRule::default()).unwrap();
    let ids: Vec<&str> = out.iter().map(|r| r.gene_id.as_str()).collect();
    assert_eq!(ids, ["g0", "g2", "g1"]);
    // g2 has PPI 1 but no evidence in the Bayes factor, g1 the reverse
    assert!(out[0].selected && !out[1].selected && !out[2].selected);
    assert_eq!(out[0].posterior_mean_l, Some(2.0));
    assert_eq!(out[2].posterior_mean_l, None);
}
