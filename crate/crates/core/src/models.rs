//! Pre- and post-change observation models.
//!
//! Observations are independent, drawn from `f0` before the changepoint and
//! from `f1` from the changepoint on. Each model exposes the likelihood ratio
//! `f1(x) / f0(x)`, its logarithm, a sampler, and (for finite support) an
//! exhaustive path enumerator used as an exact oracle.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard limit on the length of enumerated paths (2^20 paths).
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    GaussianMeanShift,
    Bernoulli,
    ExponentialRate,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_mean_shift" | "gaussian" => Ok(Self::GaussianMeanShift),
            "bernoulli" => Ok(Self::Bernoulli),
            "exponential_rate" | "exponential" => Ok(Self::ExponentialRate),
            other => Err(Error::InvalidParameter(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Params {
    /// Common variance, pre- and post-change means.
    Gaussian { mean0: f64, mean1: f64, var: f64 },
    Bernoulli { p0: f64, p1: f64 },
    Exponential { rate0: f64, rate1: f64 },
}

/// Likelihood ratio of one observation, in both domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrStep {
    pub lr: f64,
    pub log_lr: f64,
}

impl LrStep {
    pub fn from_lr(lr: f64) -> Self {
        Self { lr, log_lr: lr.ln() }
    }

    pub fn from_log_lr(log_lr: f64) -> Self {
        Self { lr: log_lr.exp(), log_lr }
    }
}

/// A simple-versus-simple change model. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    params: Params,
}

impl ObservationModel {
    /// Build a model from a family and the raw parameter lists used in
    /// experiment configs.
    ///
    /// * gaussian: `pre = [mean0]` or `[mean0, variance]`, `post = [mean1]` or
    ///   `[mean1, variance]` (the variance must not change).
    /// * bernoulli: `pre = [p0]`, `post = [p1]`, both in (0, 1).
    /// * exponential: `pre = [rate0]`, `post = [rate1]`, both positive.
    pub fn new(family: ModelFamily, pre: &[f64], post: &[f64]) -> Result<Self> {
        if pre.iter().chain(post).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        let arity = |v: &[f64], allowed: &[usize], what: &str| -> Result<()> {
            if allowed.contains(&v.len()) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{what} expects {allowed:?} parameters, got {}",
                    v.len()
                )))
            }
        };
        let params = match family {
            ModelFamily::GaussianMeanShift => {
                arity(pre, &[1, 2], "gaussian pre")?;
                arity(post, &[1, 2], "gaussian post")?;
                let var = pre.get(1).copied().unwrap_or(1.0);
                let var1 = post.get(1).copied().unwrap_or(var);
                if var <= 0.0 {
                    return Err(Error::InvalidParameter("variance must be positive".into()));
                }
                if var1 != var {
                    return Err(Error::InvalidParameter(
                        "gaussian mean shift requires equal pre/post variance".into(),
                    ));
                }
                Params::Gaussian { mean0: pre[0], mean1: post[0], var }
            }
            ModelFamily::Bernoulli => {
                arity(pre, &[1], "bernoulli pre")?;
                arity(post, &[1], "bernoulli post")?;
                for p in [pre[0], post[0]] {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::InvalidParameter(format!(
                            "bernoulli probability {p} outside (0, 1)"
                        )));
                    }
                }
                Params::Bernoulli { p0: pre[0], p1: post[0] }
            }
            ModelFamily::ExponentialRate => {
                arity(pre, &[1], "exponential pre")?;
                arity(post, &[1], "exponential post")?;
                if pre[0] <= 0.0 || post[0] <= 0.0 {
                    return Err(Error::InvalidParameter("exponential rates must be positive".into()));
                }
                Params::Exponential { rate0: pre[0], rate1: post[0] }
            }
        };
        let model = Self { params };
        if model.pre_params() == model.post_params() {
            return Err(Error::InvalidParameter(
                "pre- and post-change parameters coincide; no change to detect".into(),
            ));
        }
        Ok(model)
    }

    /// Unit-variance gaussian, mean 0 before and `theta` after the change.
    pub fn gaussian(theta: f64) -> Result<Self> {
        Self::new(ModelFamily::GaussianMeanShift, &[0.0], &[theta])
    }

    pub fn bernoulli(p0: f64, p1: f64) -> Result<Self> {
        Self::new(ModelFamily::Bernoulli, &[p0], &[p1])
    }

    pub fn exponential(rate0: f64, rate1: f64) -> Result<Self> {
        Self::new(ModelFamily::ExponentialRate, &[rate0], &[rate1])
    }

    pub fn family(&self) -> ModelFamily {
        match self.params {
            Params::Gaussian { .. } => ModelFamily::GaussianMeanShift,
            Params::Bernoulli { .. } => ModelFamily::Bernoulli,
            Params::Exponential { .. } => ModelFamily::ExponentialRate,
        }
    }

    pub fn pre_params(&self) -> Vec<f64> {
        match self.params {
            Params::Gaussian { mean0, var, .. } => vec![mean0, var],
            Params::Bernoulli { p0, .. } => vec![p0],
            Params::Exponential { rate0, .. } => vec![rate0],
        }
    }

    pub fn post_params(&self) -> Vec<f64> {
        match self.params {
            Params::Gaussian { mean1, var, .. } => vec![mean1, var],
            Params::Bernoulli { p1, .. } => vec![p1],
            Params::Exponential { rate1, .. } => vec![rate1],
        }
    }

    fn check_support(&self, x: f64) -> Result<()> {
        let ok = match self.params {
            Params::Gaussian { .. } => x.is_finite(),
            Params::Bernoulli { .. } => x == 0.0 || x == 1.0,
            Params::Exponential { .. } => x.is_finite() && x >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "observation {x} outside the support of the {:?} model",
                self.family()
            )))
        }
    }

    /// `log f1(x) - log f0(x)` without support checks.
    fn log_lr_unchecked(&self, x: f64) -> f64 {
        match self.params {
            Params::Gaussian { mean0, mean1, var } => {
                let shift = mean1 - mean0;
                (shift * (x - mean0) - 0.5 * shift * shift) / var
            }
            Params::Bernoulli { p0, p1 } => {
                if x == 1.0 {
                    (p1 / p0).ln()
                } else {
                    ((1.0 - p1) / (1.0 - p0)).ln()
                }
            }
            Params::Exponential { rate0, rate1 } => (rate1 / rate0).ln() - (rate1 - rate0) * x,
        }
    }

    /// Likelihood ratio and its log for an observation known to be in the
    /// support. Bernoulli ratios are formed directly so that oracle
    /// comparisons are not perturbed by an `exp(ln(.))` round trip.
    #[inline]
    pub fn step(&self, x: f64) -> LrStep {
        match self.params {
            Params::Bernoulli { p0, p1 } => {
                if x == 1.0 {
                    LrStep::from_lr(p1 / p0)
                } else {
                    LrStep::from_lr((1.0 - p1) / (1.0 - p0))
                }
            }
            _ => LrStep::from_log_lr(self.log_lr_unchecked(x)),
        }
    }

    /// `f1(x) / f0(x)`.
    pub fn likelihood_ratio(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok(self.step(x).lr)
    }

    pub fn log_likelihood_ratio(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok(self.step(x).log_lr)
    }

    /// Infimum of the likelihood ratio over the support of `f0`.
    pub fn inf_likelihood_ratio(&self) -> f64 {
        match self.params {
            Params::Gaussian { .. } => 0.0,
            Params::Bernoulli { p0, p1 } => (p1 / p0).min((1.0 - p1) / (1.0 - p0)),
            Params::Exponential { rate0, rate1 } => {
                if rate1 > rate0 {
                    0.0
                } else {
                    rate1 / rate0
                }
            }
        }
    }

    /// One draw from `f1` if `post_change`, else from `f0`.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, post_change: bool) -> f64 {
        match self.params {
            Params::Gaussian { mean0, mean1, var } => {
                let z: f64 = StandardNormal.sample(rng);
                let mean = if post_change { mean1 } else { mean0 };
                mean + var.sqrt() * z
            }
            Params::Bernoulli { p0, p1 } => {
                let p = if post_change { p1 } else { p0 };
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Params::Exponential { rate0, rate1 } => {
                let rate = if post_change { rate1 } else { rate0 };
                // Rates are validated positive at construction.
                Exp::new(rate).expect("positive rate").sample(rng)
            }
        }
    }

    /// `X_1, ..., X_length` under the measure selected by `change`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        change: ChangeSpec,
        length: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        (1..=length as u64)
            .map(|i| self.sample(rng, change.is_post_change(i)))
            .collect()
    }

    /// Every binary path of length `n` with its exact probability under the
    /// measure selected by `change`. Bernoulli only; `n <= ENUMERATION_CAP`.
    ///
    /// Paths are listed in binary counting order with `X_1` as the most
    /// significant digit.
    pub fn enumerate_paths(&self, change: ChangeSpec, n: usize) -> Result<Vec<EnumeratedPath>> {
        let Params::Bernoulli { p0, p1 } = self.params else {
            return Err(Error::UnsupportedModel(format!(
                "{:?} has infinite support and cannot be enumerated",
                self.family()
            )));
        };
        if n > ENUMERATION_CAP {
            return Err(Error::InvalidParameter(format!(
                "enumeration length {n} exceeds the cap of {ENUMERATION_CAP}"
            )));
        }
        let paths = (0u32..(1u32 << n))
            .map(|code| {
                let mut prob = 1.0;
                let path: Vec<u8> = (0..n)
                    .map(|i| {
                        let bit = ((code >> (n - 1 - i)) & 1) as u8;
                        let p = if change.is_post_change(i as u64 + 1) { p1 } else { p0 };
                        prob *= if bit == 1 { p } else { 1.0 - p };
                        bit
                    })
                    .collect();
                EnumeratedPath { path, prob }
            })
            .collect();
        Ok(paths)
    }
}

/// One binary path together with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub path: Vec<u8>,
    pub prob: f64,
}

impl EnumeratedPath {
    pub fn observations(&self) -> impl Iterator<Item = f64> + '_ {
        self.path.iter().map(|&b| f64::from(b))
    }
}

/// Serial number of the first post-change observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeSpec {
    At(u64),
    Never,
}

impl ChangeSpec {
    pub fn at(nu: u64) -> Result<Self> {
        if nu == 0 {
            Err(Error::InvalidParameter("changepoint must be at least 1".into()))
        } else {
            Ok(Self::At(nu))
        }
    }

    /// Whether observation `i` (1-based) is drawn post-change.
    #[inline]
    pub fn is_post_change(&self, i: u64) -> bool {
        match *self {
            Self::At(nu) => i >= nu,
            Self::Never => false,
        }
    }

    pub fn nu(&self) -> Option<u64> {
        match *self {
            Self::At(nu) => Some(nu),
            Self::Never => None,
        }
    }

    /// The change as seen by a run that starts after `elapsed` observations.
    pub fn shifted(&self, elapsed: u64) -> Self {
        match *self {
            Self::At(nu) if nu > elapsed => Self::At(nu - elapsed),
            Self::At(_) => Self::At(1),
            Self::Never => Self::Never,
        }
    }
}

impl std::fmt::Display for ChangeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::At(nu) => write!(f, "{nu}"),
            Self::Never => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for ChangeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "never" => Ok(Self::Never),
            other => {
                let nu: u64 = other
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad changepoint `{other}`")))?;
                Self::at(nu)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    #[test]
    fn likelihood_ratio_examples() {
        let g = ObservationModel::gaussian(1.0).unwrap();
        assert_eq!(g.likelihood_ratio(0.5).unwrap(), 1.0);
        let b = ObservationModel::bernoulli(0.5, 0.75).unwrap();
        assert_eq!(b.likelihood_ratio(1.0).unwrap(), 1.5);
        assert_eq!(b.likelihood_ratio(0.0).unwrap(), 0.5);
        let e = ObservationModel::exponential(1.0, 2.0).unwrap();
        assert!((e.likelihood_ratio(0.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn support_violations_are_domain_errors() {
        let e = ObservationModel::exponential(1.0, 2.0).unwrap();
        assert!(matches!(e.likelihood_ratio(-0.1), Err(Error::Domain(_))));
        let b = ObservationModel::bernoulli(0.5, 0.75).unwrap();
        assert!(matches!(b.likelihood_ratio(0.5), Err(Error::Domain(_))));
        let g = ObservationModel::gaussian(1.0).unwrap();
        assert!(matches!(g.log_likelihood_ratio(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_degenerate_models() {
        assert!(ObservationModel::gaussian(0.0).is_err());
        assert!(ObservationModel::bernoulli(0.5, 0.5).is_err());
        assert!(ObservationModel::bernoulli(0.0, 0.5).is_err());
        assert!(ObservationModel::exponential(1.0, -1.0).is_err());
        assert!(ObservationModel::new(ModelFamily::GaussianMeanShift, &[0.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn change_spec_semantics() {
        assert!(ChangeSpec::at(0).is_err());
        let c = ChangeSpec::At(3);
        assert!(!c.is_post_change(2));
        assert!(c.is_post_change(3));
        assert_eq!(c.shifted(1), ChangeSpec::At(2));
        assert_eq!(c.shifted(5), ChangeSpec::At(1));
        assert!(!ChangeSpec::Never.is_post_change(u64::MAX));
        assert_eq!("inf".parse::<ChangeSpec>().unwrap(), ChangeSpec::Never);
        assert_eq!("7".parse::<ChangeSpec>().unwrap(), ChangeSpec::At(7));
    }

    #[test]
    fn enumeration_examples() {
        let b = ObservationModel::bernoulli(0.5, 0.75).unwrap();
        let paths = b.enumerate_paths(ChangeSpec::Never, 2).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(paths.iter().all(|p| p.prob == 0.25));

        let paths = b.enumerate_paths(ChangeSpec::At(2), 2).unwrap();
        let ones = paths.iter().find(|p| p.path == [1, 1]).unwrap();
        assert!((ones.prob - 0.375).abs() < 1e-15);

        assert!(b.enumerate_paths(ChangeSpec::Never, ENUMERATION_CAP + 1).is_err());
        let g = ObservationModel::gaussian(1.0).unwrap();
        assert!(matches!(
            g.enumerate_paths(ChangeSpec::Never, 2),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn enumeration_is_normalized() {
        let b = ObservationModel::bernoulli(0.3, 0.8).unwrap();
        for n in 1..=12usize {
            let changes = (1..=n as u64).map(ChangeSpec::At).chain([ChangeSpec::Never]);
            for change in changes {
                let paths = b.enumerate_paths(change, n).unwrap();
                assert!(paths.iter().all(|p| p.prob >= 0.0));
                let total: f64 = paths.iter().map(|p| p.prob).sum();
                assert!((total - 1.0).abs() < 1e-12, "n={n} change={change}: {total}");
            }
        }
    }

    #[test]
    fn sample_path_regimes() {
        let b = ObservationModel::bernoulli(0.1, 0.9).unwrap();
        let streams = StreamFactory::new(5);
        let pre = b.sample_path(ChangeSpec::Never, 2000, &mut streams.stream(0));
        let post = b.sample_path(ChangeSpec::At(1), 2000, &mut streams.stream(1));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&pre) - 0.1).abs() < 0.03);
        assert!((mean(&post) - 0.9).abs() < 0.03);

        let a = b.sample_path(ChangeSpec::At(10), 50, &mut streams.stream(2));
        let c = b.sample_path(ChangeSpec::At(10), 50, &mut streams.stream(2));
        assert_eq!(a, c);
    }

    #[test]
    fn bernoulli_sample_mean_matches() {
        let b = ObservationModel::bernoulli(0.5, 0.75).unwrap();
        let n = 100_000;
        let xs = b.sample_path(ChangeSpec::Never, n, &mut StreamFactory::new(11).stream(0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se);
    }
}
