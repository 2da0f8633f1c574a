//! Finite-sample tests and summaries used by the harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const KS_MIN_SAMPLES: usize = 50;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolated quantile of `xs` at `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

/// `Q(x) = 2 sum_{j >= 1} (-1)^{j-1} exp(-2 j^2 x^2)`, the Kolmogorov tail.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * x * x).exp();
        sum += if j as usize % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// `Q((sqrt(n) + 0.12 + 0.11 / sqrt(n)) D)`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let n = samples.len();
    if n < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: n,
        });
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let root = nf.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_tail((root + 0.12 + 0.11 / root) * d),
        samples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of `observed` counts to cell probabilities `expected`.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult> {
    let total: u64 = observed.iter().sum();
    if observed.len() != expected.len() || observed.len() < 2 || total == 0 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: observed.len().min(total as usize),
        });
    }
    let n = total as f64;
    let statistic: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| (o as f64 - n * p).powi(2) / (n * p))
        .sum();
    let dof = expected.iter().filter(|&&p| p > 0.0).count() - 1;
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(f64::NAN);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value,
    })
}

/// Empirical frequency compared to a reference probability with a
/// `z`-sigma binomial band around the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialComparison {
    pub successes: usize,
    pub trials: usize,
    pub frequency: f64,
    pub reference: f64,
    pub half_width: f64,
}

impl BinomialComparison {
    pub fn new(successes: usize, trials: usize, reference: f64, z: f64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let m = trials as f64;
        Ok(Self {
            successes,
            trials,
            frequency: successes as f64 / m,
            reference,
            half_width: z * (reference * (1.0 - reference) / m).max(0.0).sqrt(),
        })
    }

    pub fn deviation(&self) -> f64 {
        (self.frequency - self.reference).abs()
    }

    pub fn within(&self) -> bool {
        self.deviation() <= self.half_width + 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // 1% and 5% critical values of the Kolmogorov distribution
        assert_abs_diff_eq!(kolmogorov_tail(1.6276), 0.01, epsilon = 1e-4);
        assert_abs_diff_eq!(kolmogorov_tail(1.3581), 0.05, epsilon = 1e-4);
    }

    #[test]
    fn ks_requires_fifty_samples() {
        assert!(matches!(
            ks_test(&[0.0; 49], standard_normal_cdf),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn ks_constant_sample_is_rejected() {
        let r = ks_test(&[0.3; 100], standard_normal_cdf).unwrap();
        assert!(r.statistic >= 0.5);
    }

    #[test]
    fn ks_detects_a_unit_shift() {
        let xs = normals(1, 2000);
        let r = ks_test(&xs, |x| standard_normal_cdf(x - 1.0)).unwrap();
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn ks_is_calibrated() {
        let rejects = (0..500)
            .filter(|&s| ks_test(&normals(100 + s, 2000), standard_normal_cdf).unwrap().p_value < 0.01)
            .count();
        // 1% of 500 with a generous binomial band
        assert!(rejects <= 15, "{rejects} rejections");
    }

    #[test]
    fn chi_square_matches_hand_computation() {
        let r = chi_square_test(&[30, 70], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(r.statistic, 16.0, epsilon = 1e-12);
        assert_eq!(r.dof, 1);
        assert!(r.p_value < 1e-3);
    }

    #[test]
    fn summaries() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_abs_diff_eq!(mean(&xs), 2.5);
        assert_abs_diff_eq!(variance(&xs), 5.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(median(&xs), 2.5);
        assert_abs_diff_eq!(quantile(&xs, 1.0), 4.0);
    }

    #[test]
    fn binomial_band() {
        let b = BinomialComparison::new(7000, 10_000, 0.7, 3.0).unwrap();
        assert_abs_diff_eq!(b.half_width, 3.0 * (0.21f64 / 1e4).sqrt(), epsilon = 1e-15);
        assert!(b.within());
        assert!(!BinomialComparison::new(6800, 10_000, 0.7, 3.0).unwrap().within());
    }
}
