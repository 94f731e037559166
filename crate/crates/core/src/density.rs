//! Negative binomial and collapsed multivariate-t log-densities.

use std::f64::consts::PI;
use std::sync::OnceLock;

use faer::linalg::solvers::{DenseSolveCore, Llt};
use faer::{Mat, Side};
use statrs::function::gamma::ln_gamma;

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::kernel::{default_jitter, KernelMatrix, SquaredDistances, MAX_JITTER};

/// `lnG(phi + y) - lnG(phi)` for a non-negative integer `y`, without the
/// cancellation of the direct difference when `phi` is large.
pub(crate) fn ln_gamma_ratio(y: f64, phi: f64) -> f64 {
    if y < 16.0 {
        let mut s = 0.0;
        let mut k = 0.0;
        while k < y {
            s += (phi + k).ln();
            k += 1.0;
        }
        s
    } else if phi <= 1e5 {
        ln_gamma(phi + y) - ln_gamma(phi)
    } else {
        // Stirling series for both terms, differenced analytically
        let z = phi + y;
        (phi - 0.5) * (y / phi).ln_1p() + y * z.ln() - y + (1.0 / z - 1.0 / phi) / 12.0
            - (1.0 / z.powi(3) - 1.0 / phi.powi(3)) / 360.0
    }
}

/// Log pmf of NB with mean `mu` and dispersion `phi` (variance `mu + mu^2/phi`).
pub fn log_nb_pmf(y: u64, mu: f64, phi: f64) -> f64 {
    let yf = y as f64;
    let coef = if y == 0 {
        0.0
    } else {
        ln_gamma_ratio(yf, phi) - ln_gamma(yf + 1.0)
    };
    let log_p0 = -phi * (mu / phi).ln_1p();
    let tail = if y == 0 { 0.0 } else { yf * (mu.ln() - (mu + phi).ln()) };
    coef + log_p0 + tail
}

/// `log NB(y; mu_new, phi) - log NB(y; mu, phi)`, given `log(mu_new / mu)`.
#[inline]
pub(crate) fn nb_mu_log_ratio(y: f64, mu: f64, mu_new: f64, log_step: f64, phi: f64) -> f64 {
    y * log_step - (y + phi) * ((mu_new - mu) / (mu + phi)).ln_1p()
}

/// Distinct positive counts of one gene and their multiplicities, so that
/// the gamma-function terms cost one evaluation per distinct count.
#[derive(Debug, Clone)]
pub(crate) struct CountLevels {
    values: Vec<f64>,
    mult: Vec<f64>,
    log_factorials: f64,
}

impl CountLevels {
    pub(crate) fn new(y: &[f64]) -> Self {
        let mut pos: Vec<f64> = y.iter().copied().filter(|&c| c > 0.0).collect();
        pos.sort_by(f64::total_cmp);
        let mut values = Vec::new();
        let mut mult: Vec<f64> = Vec::new();
        for c in pos.iter().copied() {
            if values.last() == Some(&c) {
                *mult.last_mut().unwrap() += 1.0;
            } else {
                values.push(c);
                mult.push(1.0);
            }
        }
        let log_factorials = values.iter().zip(&mult).map(|(v, m)| m * ln_gamma(v + 1.0)).sum();
        CountLevels {
            values,
            mult,
            log_factorials,
        }
    }

    /// `sum over positive y of lnG(y + phi) - lnG(phi)`.
    fn gamma_terms(&self, phi: f64) -> f64 {
        self.values.iter().zip(&self.mult).map(|(&v, m)| m * ln_gamma_ratio(v, phi)).sum()
    }
}

/// Terms of `sum_{i: eta_i = 0} log NB(y_i; mu_i, phi)` that involve `phi`.
///
/// Indicators must be false wherever the count is positive.
pub(crate) fn nb_phi_terms(levels: &CountLevels, y: &[f64], mu: &[f64], eta: &[bool], phi: f64) -> f64 {
    let phi_log_phi = phi * phi.ln();
    let rest: f64 = y
        .iter()
        .zip(mu)
        .zip(eta)
        .filter(|(_, &e)| !e)
        .map(|((&y, &mu), _)| phi_log_phi - (phi + y) * (mu + phi).ln())
        .sum();
    levels.gamma_terms(phi) + rest
}

/// `sum_{i: eta_i = 0} log NB(y_i; mu_i, phi)`, indicators false at positive counts.
pub(crate) fn nb_gene_loglik(levels: &CountLevels, y: &[f64], mu: &[f64], eta: &[bool], phi: f64) -> f64 {
    let cross: f64 = y.iter().zip(mu).filter(|(&y, _)| y > 0.0).map(|(&y, &mu)| y * mu.ln()).sum();
    nb_phi_terms(levels, y, mu, eta, phi) + cross - levels.log_factorials
}

/// Which covariance the collapsed marginal uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Branch {
    /// SE kernel, `gamma_j = 1`.
    Spatial,
    /// White noise `K = I`, `gamma_j = 0`.
    Nonspatial,
}

/// Parameters of the multivariate-t marginal of a gene's log expression.
///
/// With `beta ~ N(0, h sigma^2 I)` and `sigma^2 ~ IG(a, b)` integrated out,
/// `log lambda_j ~ MVT_{2a}(0, (b/a)(K + h X X^T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvtSpec {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub h: f64,
    pub branch: Branch,
}

impl MvtSpec {
    pub fn dof(&self) -> f64 {
        2.0 * self.a_sigma
    }

    pub fn scale_multiplier(&self) -> f64 {
        self.b_sigma / self.a_sigma
    }
}

/// Normalizing constants of the MVT for a fixed dimension.
#[derive(Debug, Clone, Copy)]
pub struct MvtNorm {
    pub n: usize,
    pub a_sigma: f64,
    pub b_sigma: f64,
    log_norm: f64,
}

impl MvtNorm {
    pub fn new(n: usize, a_sigma: f64, b_sigma: f64) -> Self {
        let half_n = n as f64 / 2.0;
        let log_norm =
            ln_gamma(a_sigma + half_n) - ln_gamma(a_sigma) - half_n * (2.0 * PI * b_sigma).ln();
        MvtNorm {
            n,
            a_sigma,
            b_sigma,
            log_norm,
        }
    }

    /// Log-density given `log|M|` and the quadratic form `v^T M^{-1} v`.
    #[inline]
    pub fn log_density(&self, log_det: f64, quad: f64) -> f64 {
        self.log_norm - 0.5 * log_det - self.exponent() * (quad / (2.0 * self.b_sigma)).ln_1p()
    }

    /// Change in log-density when the quadratic form moves from `q_old` to
    /// `q_new` with the covariance fixed.
    #[inline]
    pub fn log_ratio_quad(&self, q_old: f64, q_new: f64) -> f64 {
        -self.exponent() * ((q_new - q_old) / (2.0 * self.b_sigma + q_old)).ln_1p()
    }

    #[inline]
    fn exponent(&self) -> f64 {
        self.a_sigma + self.n as f64 / 2.0
    }
}

/// Cholesky factor of `M = K + h X X^T`, with the inverse computed on demand.
pub struct MvtFactor {
    llt: Llt<f64>,
    log_det: f64,
    precision: OnceLock<Mat<f64>>,
    low_rank: Option<LowRankPrecision>,
    length_scale: Option<f64>,
    jitter: f64,
}

impl std::fmt::Debug for MvtFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MvtFactor")
            .field("n", &self.n())
            .field("log_det", &self.log_det)
            .field("length_scale", &self.length_scale)
            .field("jitter", &self.jitter)
            .finish()
    }
}

fn add_design(m: &mut Mat<f64>, x: &DesignMatrix, h: f64) {
    let xm = x.matrix();
    let n = m.nrows();
    for r in 0..xm.ncols() {
        for j in 0..n {
            let xj = h * xm[(j, r)];
            for i in 0..n {
                m[(i, j)] += xm[(i, r)] * xj;
            }
        }
    }
}

impl MvtFactor {
    fn from_matrix(m: &Mat<f64>, length_scale: Option<f64>, jitter: f64) -> Option<Self> {
        let llt = m.llt(Side::Lower).ok()?;
        let l = llt.L();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(MvtFactor {
            llt,
            log_det,
            precision: OnceLock::new(),
            low_rank: None,
            length_scale,
            jitter,
        })
    }

    /// Factor of `K + h X X^T` for an explicit kernel matrix.
    pub fn from_kernel(k: &KernelMatrix, x: &DesignMatrix, h: f64) -> Result<Self> {
        let mut m = k.k.clone();
        add_design(&mut m, x, h);
        Self::from_matrix(&m, Some(k.length_scale), k.jitter).ok_or(Error::Cholesky {
            length_scale: k.length_scale,
            jitter: k.jitter,
        })
    }

    /// Factor of `K(l) + h X X^T` with the default jitter policy.
    pub fn spatial(distances: &Mat<f64>, l: f64, x: &DesignMatrix, h: f64) -> Result<Self> {
        Self::spatial_from(&SquaredDistances::new(distances, false), l, x, h)
    }

    pub(crate) fn spatial_from(distances: &SquaredDistances, l: f64, x: &DesignMatrix, h: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Validation(format!("length-scale must be positive, got {l}")));
        }
        let mut jitter = default_jitter(distances.n());
        loop {
            let m = distances.lower_matrix(l, jitter, x, h);
            if let Some(f) = Self::from_matrix(&m, Some(l), jitter) {
                return Ok(f);
            }
            if jitter >= MAX_JITTER {
                return Err(Error::Cholesky {
                    length_scale: l,
                    jitter,
                });
            }
            jitter = (jitter * 10.0).min(MAX_JITTER);
        }
    }

    /// Factor of `I + h X X^T`.
    pub fn nonspatial(x: &DesignMatrix, h: f64) -> Result<Self> {
        let n = x.n_rows();
        let mut m = Mat::identity(n, n);
        add_design(&mut m, x, h);
        let mut f = Self::from_matrix(&m, None, 0.0).ok_or(Error::Cholesky {
            length_scale: f64::INFINITY,
            jitter: 0.0,
        })?;
        f.low_rank = Some(LowRankPrecision::new(x, h)?);
        Ok(f)
    }

    pub fn n(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn length_scale(&self) -> Option<f64> {
        self.length_scale
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `v^T M^{-1} v` by forward substitution.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let l = self.llt.L();
        let n = l.nrows();
        debug_assert_eq!(v.len(), n);
        let mut z = v.to_vec();
        for j in 0..n {
            let col = l.col(j).try_as_col_major().unwrap().as_slice();
            let zj = z[j] / col[j];
            z[j] = zj;
            for (zi, &lij) in z[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *zi -= zj * lij;
            }
        }
        z.iter().map(|x| x * x).sum()
    }

    /// `M^{-1} = I - X W X^T` when `M = I + h X X^T`.
    pub(crate) fn low_rank(&self) -> Option<&LowRankPrecision> {
        self.low_rank.as_ref()
    }

    /// `M^{-1}`, computed from the factor the first time it is requested.
    pub fn precision(&self) -> &Mat<f64> {
        self.precision.get_or_init(|| self.llt.inverse())
    }
}

/// `(I + h X X^T)^{-1} = I - X W X^T` with `W = (X^T X + I / h)^{-1}`.
#[derive(Debug, Clone)]
pub(crate) struct LowRankPrecision {
    r: usize,
    /// Rows of `X`, row-major.
    x: Vec<f64>,
    /// Rows of `X W`, row-major.
    xw: Vec<f64>,
}

impl LowRankPrecision {
    fn new(x: &DesignMatrix, h: f64) -> Result<Self> {
        let xm = x.matrix();
        let (n, r) = (xm.nrows(), xm.ncols());
        let gram = Mat::from_fn(r, r, |a, b| {
            (0..n).map(|i| xm[(i, a)] * xm[(i, b)]).sum::<f64>() + if a == b { 1.0 / h } else { 0.0 }
        });
        let w = gram
            .llt(Side::Lower)
            .map_err(|_| Error::Cholesky {
                length_scale: f64::INFINITY,
                jitter: 0.0,
            })?
            .inverse();
        let rows: Vec<f64> = (0..n).flat_map(|i| (0..r).map(move |c| (i, c))).map(|(i, c)| xm[(i, c)]).collect();
        let xw = (0..n)
            .flat_map(|i| (0..r).map(move |c| (i, c)))
            .map(|(i, c)| (0..r).map(|k| xm[(i, k)] * w[(k, c)]).sum())
            .collect();
        Ok(LowRankPrecision { r, x: rows, xw })
    }

    pub(crate) fn rank(&self) -> usize {
        self.r
    }

    #[inline]
    pub(crate) fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.r..(i + 1) * self.r]
    }

    #[inline]
    pub(crate) fn xw_row(&self, i: usize) -> &[f64] {
        &self.xw[i * self.r..(i + 1) * self.r]
    }

    /// Diagonal entry `1 - x_i^T W x_i`.
    #[inline]
    pub(crate) fn diag(&self, i: usize) -> f64 {
        1.0 - dot(self.x_row(i), self.xw_row(i))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log pi(log lambda_j | gamma_j, l_j)`: the collapsed MVT log-density.
///
/// The spatial branch uses `kernel`; the nonspatial branch ignores it and
/// uses the identity. The scale `(b/a)(K + h X X^T)` is factored directly,
/// which equals the nested-inverse form obtained by integrating out the
/// coefficients.
pub fn log_mvt_marginal(
    log_lambda: &[f64],
    spec: &MvtSpec,
    x: &DesignMatrix,
    kernel: Option<&KernelMatrix>,
) -> Result<f64> {
    if log_lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log expression vector"));
    }
    let n = log_lambda.len();
    if x.n_rows() != n {
        return Err(Error::Validation(format!(
            "design has {} rows, vector has {n}",
            x.n_rows()
        )));
    }
    let factor = match spec.branch {
        Branch::Spatial => {
            let k = kernel.ok_or_else(|| {
                Error::Validation("spatial branch requires a kernel matrix".into())
            })?;
            if k.n() != n {
                return Err(Error::Validation(format!("kernel is {}x{0}, vector has {n}", k.n())));
            }
            MvtFactor::from_kernel(k, x, spec.h)?
        }
        Branch::Nonspatial => MvtFactor::nonspatial(x, spec.h)?,
    };
    let norm = MvtNorm::new(n, spec.a_sigma, spec.b_sigma);
    Ok(norm.log_density(factor.log_det(), factor.quad_form(log_lambda)))
}
