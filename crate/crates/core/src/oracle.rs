//! Exact computations over enumerated Bernoulli paths.
//!
//! Stopping times on a path of length `n` are truncated at `n`; `N ^ n` is
//! itself a stopping time, so identities between its moments hold exactly.

use crate::detectors::{run_from_source, PathSource, RunLimits, ThresholdRule};
use crate::error::Result;
use crate::models::{ChangeSpec, EnumeratedPath, ObservationModel};

/// `sum_{k=1}^n prod_{i=k}^n lr_i`, term by term.
pub fn sr_sum_of_products(lrs: &[f64]) -> f64 {
    (0..lrs.len()).map(|k| lrs[k..].iter().product::<f64>()).sum()
}

/// Largest relative gap between a recursive SR update and the direct
/// sum-of-products, over every prefix of every path of length `n`.
///
/// `update(r, lr)` is the recursion under test; the correct one is
/// `(1 + r) * lr`.
pub fn sr_recursion_error<F>(model: &ObservationModel, n: usize, update: F) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let paths = model.enumerate_paths(ChangeSpec::Never, n)?;
    let mut worst = 0.0f64;
    for p in &paths {
        let lrs: Vec<f64> = p.observations().map(|x| model.step(x).lr).collect();
        let mut r = 0.0;
        for m in 1..=n {
            r = update(r, lrs[m - 1]);
            let direct = sr_sum_of_products(&lrs[..m]);
            worst = worst.max((r - direct).abs() / direct.abs());
        }
    }
    Ok(worst)
}

/// `E_inf R_n` by exhaustive enumeration; equals `n` because `R_n - n` is a
/// zero-mean martingale under no change.
pub fn null_mean_sr(model: &ObservationModel, n: usize) -> Result<f64> {
    let paths = model.enumerate_paths(ChangeSpec::Never, n)?;
    Ok(paths
        .iter()
        .map(|p| {
            let r = p.observations().fold(0.0, |r, x| (1.0 + r) * model.step(x).lr);
            p.prob * r
        })
        .sum())
}

/// Law of `N ^ n` for a rule under the measure selected by `change`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedStopping {
    pub n: usize,
    /// `(N ^ n, probability)` per enumerated path.
    pub outcomes: Vec<(u64, f64)>,
}

impl TruncatedStopping {
    pub fn new(rule: &ThresholdRule, model: &ObservationModel, change: ChangeSpec, n: usize) -> Result<Self> {
        let paths = model.enumerate_paths(change, n)?;
        let outcomes = paths.iter().map(|p| (stop_on_path(rule, model, p), p.prob)).collect();
        Ok(Self { n, outcomes })
    }

    /// `P(N >= k)` (exact for `k <= n`).
    pub fn survival(&self, k: u64) -> f64 {
        self.outcomes.iter().filter(|(s, _)| *s >= k).map(|(_, p)| p).sum()
    }

    /// `E (N ^ n - k)^+`.
    pub fn positive_part(&self, k: u64) -> f64 {
        self.outcomes.iter().map(|&(s, p)| p * s.saturating_sub(k) as f64).sum()
    }

    /// `E(N ^ n - k | N >= k)`.
    pub fn conditional(&self, k: u64) -> f64 {
        let num: f64 = self.outcomes.iter().filter(|(s, _)| *s >= k).map(|&(s, p)| p * (s - k) as f64).sum();
        num / self.survival(k)
    }

    /// `E (N ^ n)`.
    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|&(s, p)| p * s as f64).sum()
    }
}

fn stop_on_path(rule: &ThresholdRule, model: &ObservationModel, path: &EnumeratedPath) -> u64 {
    let xs: Vec<f64> = path.observations().collect();
    let n = xs.len() as u64;
    run_from_source(rule, &mut PathSource::new(model, &xs), 0, RunLimits { n_max: n }).stop
}

/// Both sides of `E_k(N - k | N >= k) P_inf(N >= k) = E_k (N - k)^+`, plus the
/// gap `|P_k(N >= k) - P_inf(N >= k)|` that makes the identity work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddIdentity {
    pub k: u64,
    pub conditional_times_survival: f64,
    pub positive_part: f64,
    pub survival_gap: f64,
}

pub fn add_identity(rule: &ThresholdRule, model: &ObservationModel, k: u64, n: usize) -> Result<AddIdentity> {
    let null = TruncatedStopping::new(rule, model, ChangeSpec::Never, n)?;
    let post = TruncatedStopping::new(rule, model, ChangeSpec::at(k)?, n)?;
    Ok(AddIdentity {
        k,
        conditional_times_survival: post.conditional(k) * null.survival(k),
        positive_part: post.positive_part(k),
        survival_gap: (post.survival(k) - null.survival(k)).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ObservationModel {
        ObservationModel::bernoulli(0.5, 0.75).unwrap()
    }

    #[test]
    fn recursion_matches_and_mutation_is_caught() {
        let err = sr_recursion_error(&toy(), 10, |r, lr| (1.0 + r) * lr).unwrap();
        assert!(err < 1e-12);
        let broken = sr_recursion_error(&toy(), 10, |r, lr| r * lr).unwrap();
        assert!(broken > 0.1);
    }

    #[test]
    fn null_martingale() {
        for n in 1..=12 {
            assert!((null_mean_sr(&toy(), n).unwrap() - n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_stopping_law() {
        let rule = ThresholdRule::sr(1.4).unwrap();
        let law = TruncatedStopping::new(&rule, &toy(), ChangeSpec::Never, 12).unwrap();
        // N is geometric(1/2): P(N >= k) = 2^{1-k}; E(N ^ 12) = 2 (1 - 2^-12).
        for k in 1..=12u64 {
            assert!((law.survival(k) - 0.5f64.powi(k as i32 - 1)).abs() < 1e-14);
        }
        assert!((law.mean() - 2.0 * (1.0 - 0.5f64.powi(12))).abs() < 1e-12);
    }

    #[test]
    fn add_identity_holds() {
        let rule = ThresholdRule::sr(1.4).unwrap();
        for k in 1..=6 {
            let id = add_identity(&rule, &toy(), k, 12).unwrap();
            assert!((id.conditional_times_survival - id.positive_part).abs() < 1e-12);
            assert!(id.survival_gap < 1e-14);
        }
    }
}
