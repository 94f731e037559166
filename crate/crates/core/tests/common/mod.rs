//! Dense reference linear algebra, independent of the library's
//! factorization code. Inverses run in double-double precision.

#![allow(dead_code)]

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

pub type M = Vec<Vec<f64>>;

pub fn identity(n: usize) -> M {
    (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect()
}

pub fn matmul(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &M, b: &M, scale_b: f64) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + scale_b * q).collect())
        .collect()
}

/// Double-double number: an unevaluated sum `hi + lo` carrying about 32
/// significant digits, so the nested inverses below stay accurate even when
/// the kernel is close to singular.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 { -self } else { self }
    }
    pub fn ln(self) -> f64 {
        self.hi.abs().ln() + (self.lo / self.hi).ln_1p()
    }
}

impl std::ops::Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl std::ops::Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::new(q3)
    }
}

type DM = Vec<Vec<Dd>>;

fn lift(a: &M) -> DM {
    a.iter().map(|r| r.iter().map(|&x| Dd::new(x)).collect()).collect()
}

fn lower(a: &DM) -> M {
    a.iter().map(|r| r.iter().map(|x| x.to_f64()).collect()).collect()
}

fn dd_identity(n: usize) -> DM {
    lift(&identity(n))
}

fn dd_matmul(a: &DM, b: &DM) -> DM {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).fold(Dd::default(), |s, t| s + a[i][t] * b[t][j])).collect())
        .collect()
}

fn dd_transpose(a: &DM) -> DM {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn dd_add(a: &DM, b: &DM, scale_b: Dd) -> DM {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p + scale_b * q).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting, and `log|det|`.
fn dd_inverse_logdet(a: &DM) -> (DM, f64) {
    let n = a.len();
    let mut w: DM = a.iter().zip(dd_identity(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| w[i][c].abs().hi.total_cmp(&w[j][c].abs().hi)).unwrap();
        w.swap(c, piv);
        let d = w[c][c];
        logdet += d.ln();
        for x in w[c].iter_mut() {
            *x = *x / d;
        }
        let row_c = w[c].clone();
        for r in 0..n {
            if r != c {
                let f = w[r][c];
                for (x, &y) in w[r].iter_mut().zip(&row_c) {
                    *x = *x - f * y;
                }
            }
        }
    }
    (w.into_iter().map(|r| r[n..].to_vec()).collect(), logdet)
}

fn dd_quad(v: &[f64], a: &DM) -> Dd {
    let mut s = Dd::default();
    for i in 0..v.len() {
        for j in 0..v.len() {
            s = s + Dd::new(v[i]) * a[i][j] * Dd::new(v[j]);
        }
    }
    s
}

pub fn inverse_logdet(a: &M) -> (M, f64) {
    let (inv, ld) = dd_inverse_logdet(&lift(a));
    (lower(&inv), ld)
}

pub fn inverse(a: &M) -> M {
    inverse_logdet(a).0
}

pub fn quad(v: &[f64], a: &M) -> f64 {
    dd_quad(v, &lift(a)).to_f64()
}

/// `K^{-1} - K^{-1} X G^{-1} X^T K^{-1}` with `G = X^T K^{-1} X + I/h`.
fn nested_precision(k: &M, x: &M, h: f64) -> DM {
    let ki = dd_inverse_logdet(&lift(k)).0;
    let x = lift(x);
    let xt = dd_transpose(&x);
    let r = xt.len();
    let g = dd_add(&dd_matmul(&dd_matmul(&xt, &ki), &x), &dd_identity(r), Dd::new(1.0) / Dd::new(h));
    let gi = dd_inverse_logdet(&g).0;
    let kix = dd_matmul(&ki, &x);
    let inner = dd_matmul(&dd_matmul(&kix, &gi), &dd_transpose(&kix));
    dd_add(&ki, &inner, Dd::new(-1.0))
}

/// Inverse of the nested precision.
pub fn nested_scale(k: &M, x: &M, h: f64) -> M {
    lower(&dd_inverse_logdet(&nested_precision(k, x, h)).0)
}

/// Student-t log density with `nu` degrees of freedom, zero location and
/// scale matrix `sigma`.
pub fn mvt_logpdf(v: &[f64], nu: f64, sigma: &M) -> f64 {
    let n = v.len() as f64;
    let (si, logdet) = inverse_logdet(sigma);
    ln_gamma((nu + n) / 2.0) - ln_gamma(nu / 2.0) - n / 2.0 * (nu * PI).ln() - 0.5 * logdet
        - (nu + n) / 2.0 * (1.0 + quad(v, &si) / nu).ln()
}

pub fn mvn_logpdf(v: &[f64], sigma: &M) -> f64 {
    let n = v.len() as f64;
    let (si, logdet) = inverse_logdet(sigma);
    -n / 2.0 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * quad(v, &si)
}

/// Scale the `n x n` matrix by `c`.
pub fn scaled(a: &M, c: f64) -> M {
    a.iter().map(|r| r.iter().map(|x| x * c).collect()).collect()
}

pub fn se_kernel(points: &[[f64; 2]], l: f64, jitter: f64) -> M {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .map(|(j, q)| {
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    (-d2 / (2.0 * l * l)).exp() + if i == j { jitter } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Collapsed log density with scale `(b/a)` times the nested-inverse
/// matrix, evaluated from the nested precision directly.
pub fn collapsed_logpdf(v: &[f64], k: &M, x: &M, h: f64, a: f64, b: f64) -> f64 {
    let p = nested_precision(k, x, h);
    let (_, logdet_p) = dd_inverse_logdet(&p);
    let n = v.len() as f64;
    let nu = 2.0 * a;
    let q = dd_quad(v, &p).to_f64() * a / b;
    ln_gamma((nu + n) / 2.0) - ln_gamma(nu / 2.0) - n / 2.0 * (nu * PI).ln() - 0.5 * (n * (b / a).ln() - logdet_p)
        - (nu + n) / 2.0 * (1.0 + q / nu).ln()
}
