use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Normal(`mean`, `sd`^2) restricted to `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    pub fn log_mass(&self) -> f64 {
        let a = std_cdf((self.lo - self.mean) / self.sd);
        let b = std_cdf((self.hi - self.mean) / self.sd);
        (b - a).ln()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * PI).ln() - self.log_mass()
    }

    /// Inverse-cdf draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = std_cdf((self.lo - self.mean) / self.sd);
        let b = std_cdf((self.hi - self.mean) / self.sd);
        let u: f64 = rng.random();
        let p = (a + u * (b - a)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        (self.mean + self.sd * std_quantile(p)).clamp(self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn draws_stay_in_bounds_and_match_mean() {
        let tn = TruncatedNormal {
            mean: 0.0,
            sd: 1.0,
            lo: 0.0,
            hi: 3.0,
        };
        let mut rng = stream(1, 0);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = tn.sample(&mut rng);
            assert!((0.0..=3.0).contains(&x));
            sum += x;
        }
        // half-normal truncated at 3: E = phi(0)-phi(3) / (Phi(3)-Phi(0))
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        let expected = (pdf(0.0) - pdf(3.0)) / (std_cdf(3.0) - 0.5);
        assert!((sum / n as f64 - expected).abs() < 0.01);
    }

    #[test]
    fn density_integrates_to_one() {
        let tn = TruncatedNormal {
            mean: 0.4,
            sd: 0.7,
            lo: -0.5,
            hi: 1.2,
        };
        let m = 20_000;
        let h = (tn.hi - tn.lo) / m as f64;
        let total: f64 = (0..m)
            .map(|k| tn.log_pdf(tn.lo + (k as f64 + 0.5) * h).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
