//! Sample summaries with standard errors, and the replication driver.

use rayon::prelude::*;
use serde::Serialize;

use crate::rng::{StreamFactory, StreamRng};

/// A Monte Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn new(value: f64, std_err: f64) -> Self {
        Self { value, std_err }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, std_err: 0.0 }
    }

    /// Mean and standard error of the mean.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self::new(f64::NAN, f64::NAN);
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self::new(mean, f64::NAN);
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self::new(mean, (var / n).sqrt())
    }

    /// Mean and standard error from exact integer moments over `n` samples.
    pub fn from_moments(n: u64, sum: u128, sum_sq: u128) -> Self {
        if n == 0 {
            return Self::new(f64::NAN, f64::NAN);
        }
        let nf = n as f64;
        let mean = sum as f64 / nf;
        if n < 2 {
            return Self::new(mean, f64::NAN);
        }
        // Centered second moment, formed in exact integer arithmetic.
        let centered = (sum_sq * n as u128).saturating_sub(sum * sum) as f64 / (nf * nf);
        let var = centered * nf / (nf - 1.0);
        Self::new(mean, (var.max(0.0) / nf).sqrt())
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_std_err(&self, other: &Self) -> f64 {
        self.std_err.hypot(other.std_err)
    }

    /// `(self - other) / combined std err`.
    pub fn z_against(&self, other: &Self) -> f64 {
        (self.value - other.value) / self.combined_std_err(other)
    }

    /// Whether `self` is within `sigmas` standard errors of an exact value.
    pub fn covers(&self, exact: f64, sigmas: f64) -> bool {
        (self.value - exact).abs() <= sigmas * self.std_err
    }

    /// Ratio of two independent estimates, delta-method error.
    pub fn ratio(&self, denom: &Self) -> Self {
        let value = self.value / denom.value;
        let rel = (self.std_err / self.value).hypot(denom.std_err / denom.value);
        let std_err = if self.value == 0.0 {
            self.std_err / denom.value
        } else {
            value.abs() * rel
        };
        Self::new(value, std_err)
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.value, self.std_err)
    }
}

/// Ratio-of-means estimate `sum(y) / sum(x)` over paired samples, with the
/// linearised standard error that accounts for their correlation.
pub fn ratio_of_means(pairs: &[(f64, f64)]) -> Estimate {
    let n = pairs.len() as f64;
    let my = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let r = my / mx;
    let var = pairs.iter().map(|&(y, x)| (y - r * x).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate::new(r, (var / n).sqrt() / mx)
}

/// Runs `f` once per replication on its own substream, in parallel, and
/// returns the results in replication order.
pub fn replicate<T, F>(streams: &StreamFactory, n_reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng) -> T + Sync + Send,
{
    (0..n_reps as u64)
        .into_par_iter()
        .map(|i| f(&mut streams.stream(i)))
        .collect()
}

/// Total-variation distance between two mass functions on `1, 2, ...`
/// (index 0 holds mass at 1); missing entries count as zero.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_float_summary() {
        let xs = [3u64, 0, 7, 2, 2, 9, 1];
        let sum: u128 = xs.iter().map(|&x| x as u128).sum();
        let sq: u128 = xs.iter().map(|&x| (x as u128).pow(2)).sum();
        let a = Estimate::from_moments(xs.len() as u64, sum, sq);
        let b = Estimate::from_samples(&xs.map(|x| x as f64));
        assert!((a.value - b.value).abs() < 1e-12);
        assert!((a.std_err - b.std_err).abs() < 1e-12);
    }

    #[test]
    fn ratio_of_means_exact_for_proportional_pairs() {
        let pairs: Vec<(f64, f64)> = (1..50).map(|i| (2.5 * i as f64, i as f64)).collect();
        let r = ratio_of_means(&pairs);
        assert!((r.value - 2.5).abs() < 1e-12);
        assert!(r.std_err < 1e-12);
    }

    #[test]
    fn total_variation_basics() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(total_variation(&[1.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn replicate_is_ordered_and_reproducible() {
        use rand::Rng;
        let s = StreamFactory::new(1);
        let a: Vec<u64> = replicate(&s, 100, |r| r.random());
        let b: Vec<u64> = replicate(&s, 100, |r| r.random());
        assert_eq!(a, b);
        assert_eq!(a[17], s.stream(17).random::<u64>());
    }
}
