//! Fixtures shared by the benchmarks.

use svgp_core::data::compute_size_factors;
use svgp_core::simulate::{generate_dataset, PatternSpec, SimConfig};
use svgp_core::{DesignMatrix, Hyperparameters, Model};

/// Spot-pattern lattice dataset with `side * side` spots and `p` genes.
pub fn spot_model(side: usize, p: usize) -> Model {
    let spec = PatternSpec { side, ..PatternSpec::spot() };
    let ds = generate_dataset(&spec, &SimConfig { n_genes: p, n_sv: p / 7, seed: 17, ..Default::default() })
        .expect("valid simulation settings");
    let s = compute_size_factors(&ds.counts).expect("simulated spots have reads");
    let n = ds.counts.n_spots();
    Model::new(&ds.counts, &ds.coords, DesignMatrix::intercept(n), &s, Hyperparameters::default(), 64)
        .expect("simulated data is valid")
}
