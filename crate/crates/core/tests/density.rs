mod common;

use common::*;
use proptest::prelude::*;
use svgp_core::kernel::{default_jitter, distance_bounds, distance_matrix, se_kernel};
use svgp_core::{log_mvt_marginal, log_nb_pmf, Branch, DesignMatrix, KernelMatrix, MvtSpec, SpatialCoords};

fn to_rows(m: &faer::Mat<f64>) -> M {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn design(n: usize, cov: Option<Vec<f64>>) -> DesignMatrix {
    match cov {
        Some(c) => DesignMatrix::with_covariates(n, &[c]).unwrap(),
        None => DesignMatrix::intercept(n),
    }
}

prop_compose! {
    /// Distinct points, a design with one or two columns and a vector.
    fn instance(max_n: usize)(n in 2..=max_n)(
        pts in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), n),
        cov in prop::option::of(prop::collection::vec(-2.0..2.0f64, n)),
        v in prop::collection::vec(-3.0..3.0f64, n),
        lfrac in 0.0..1.0f64,
        a in 1.0..6.0f64,
        b in 0.2..3.0f64,
        h in 0.5..20.0f64,
    ) -> (Vec<[f64; 2]>, Option<Vec<f64>>, Vec<f64>, f64, f64, f64, f64) {
        (pts.into_iter().map(|(x, y)| [x, y]).collect(), cov, v, lfrac, a, b, h)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spatial_marginal_matches_nested_inverse((pts, cov, v, lfrac, a, b, h) in instance(8)) {
        let n = pts.len();
        let coords = SpatialCoords::from_points(pts.clone()).unwrap();
        let d = distance_matrix(&coords);
        prop_assume!(distance_bounds(&d).map(|bd| bd.t_min > 1e-3).unwrap_or(false));
        let bd = distance_bounds(&d).unwrap();
        let l = bd.l_lower() * (bd.l_upper() / bd.l_lower()).powf(lfrac);
        let k = se_kernel(&d, l, default_jitter(n)).unwrap();
        let x = design(n, cov);
        let spec = MvtSpec { a_sigma: a, b_sigma: b, h, branch: Branch::Spatial };
        let got = log_mvt_marginal(&v, &spec, &x, Some(&k)).unwrap();
        let expected = collapsed_logpdf(&v, &to_rows(&k.k), &to_rows(x.matrix()), h, a, b);
        prop_assert!((got - expected).abs() < 1e-8, "{} vs {}", got, expected);
    }

    #[test]
    fn nonspatial_marginal_matches_nested_inverse((_, cov, v, _, a, b, h) in instance(8)) {
        let n = v.len();
        let x = design(n, cov);
        let spec = MvtSpec { a_sigma: a, b_sigma: b, h, branch: Branch::Nonspatial };
        let got = log_mvt_marginal(&v, &spec, &x, None).unwrap();
        let expected = collapsed_logpdf(&v, &identity(n), &to_rows(x.matrix()), h, a, b);
        prop_assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn marginal_invariant_to_spot_order((pts, cov, v, lfrac, a, b, h) in instance(8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = pts.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let eval = |order: &[usize]| {
            let p: Vec<[f64; 2]> = order.iter().map(|&i| pts[i]).collect();
            let c = cov.as_ref().map(|c| order.iter().map(|&i| c[i]).collect());
            let vv: Vec<f64> = order.iter().map(|&i| v[i]).collect();
            let d = distance_matrix(&SpatialCoords::from_points(p).unwrap());
            let k = KernelMatrix { k: se_kernel(&d, 0.3 + 3.0 * lfrac, 1e-6).unwrap().k, length_scale: 1.0, jitter: 1e-6 };
            let spec = MvtSpec { a_sigma: a, b_sigma: b, h, branch: Branch::Spatial };
            log_mvt_marginal(&vv, &spec, &design(n, c), Some(&k))
        };
        let id: Vec<usize> = (0..n).collect();
        let (x, y) = (eval(&id), eval(&perm));
        prop_assume!(x.is_ok());
        prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn woodbury_scale_identity_with_near_singular_kernels() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=10);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)]).collect();
        let d = distance_matrix(&SpatialCoords::from_points(pts).unwrap());
        let bd = distance_bounds(&d).unwrap();
        let l = if case % 4 == 0 { 10.0 * bd.t_max } else { rng.random_range(bd.l_lower()..bd.l_upper()) };
        let k = se_kernel(&d, l, default_jitter(n)).unwrap();
        let cov: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = if case % 2 == 0 { DesignMatrix::intercept(n) } else { DesignMatrix::with_covariates(n, &[cov]).unwrap() };
        let h = 10.0;
        let km = to_rows(&k.k);
        let xm = to_rows(x.matrix());
        let direct = add(&km, &matmul(&xm, &transpose(&xm)), h);
        let nested = nested_scale(&km, &xm, h);
        for i in 0..n {
            for j in 0..n {
                let err = (direct[i][j] - nested[i][j]).abs() / direct[i][j].abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    assert!(worst < 1e-8, "worst relative disagreement {worst:e}");
}

#[test]
fn nb_normalizes_on_grid() {
    for &mu in &[0.01, 0.5, 3.0, 20.0, 150.0] {
        for &phi in &[0.05, 0.5, 1.0, 10.0, 1e3] {
            let mut total = 0.0;
            let mut y = 0u64;
            loop {
                let p = log_nb_pmf(y, mu, phi).exp();
                total += p;
                y += 1;
                if (y as f64 > mu && p < 1e-18) || y > 2_000_000 {
                    break;
                }
            }
            assert!((total - 1.0).abs() < 1e-8, "mu {mu} phi {phi}: {total}");
        }
    }
}

#[test]
fn nb_poisson_limit() {
    use statrs::distribution::{Discrete, Poisson};
    let pois = Poisson::new(4.2).unwrap();
    for y in 0..30u64 {
        let nb = log_nb_pmf(y, 4.2, 1e9);
        assert!((nb - pois.ln_pmf(y)).abs() < 1e-6, "y {y}");
    }
}

#[test]
fn mvt_approaches_mvn_as_shape_grows() {
    let pts = vec![[0.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.3, 1.7]];
    let d = distance_matrix(&SpatialCoords::from_points(pts).unwrap());
    let k = se_kernel(&d, 1.1, 1e-6).unwrap();
    let x = DesignMatrix::intercept(4);
    let v = [0.4, -0.2, 1.1, 0.0];
    let c = 0.7;
    let a = 1e8;
    let spec = MvtSpec { a_sigma: a, b_sigma: c * a, h: 2.0, branch: Branch::Spatial };
    let got = log_mvt_marginal(&v, &spec, &x, Some(&k)).unwrap();
    let cov = scaled(&add(&to_rows(&k.k), &matmul(&to_rows(x.matrix()), &transpose(&to_rows(x.matrix()))), 2.0), c);
    assert!((got - mvn_logpdf(&v, &cov)).abs() < 1e-6);
}
