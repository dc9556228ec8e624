//! Average run length to false alarm and threshold calibration.
//!
//! `calibrate_threshold` bisects on the threshold. Every evaluation reuses the
//! same substreams (common random numbers), so each replication sees the same
//! pre-change path at every threshold and the estimated ARL curve is
//! nondecreasing in the threshold for SR, Shiryaev and CUSUM alike.

use serde::Serialize;

use crate::detectors::{run_to_alarm, RuleKind, RunLimits, RunOutcome, ThresholdRule};
use crate::error::{Error, Result};
use crate::models::{ChangeSpec, ObservationModel};
use crate::rng::StreamFactory;
use crate::stats::{replicate, Estimate};

/// Calibration aborts when more runs than this hit the observation cap.
pub const MAX_TRUNCATED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArlEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_reps: usize,
    /// Share of runs stopped by the cap; their cap value enters the mean.
    pub truncated_fraction: f64,
}

impl ArlEstimate {
    pub fn as_estimate(&self) -> Estimate {
        Estimate::new(self.mean, self.std_err)
    }

    pub(crate) fn from_runs(runs: &[RunOutcome]) -> Self {
        let n = runs.len() as u64;
        let (sum, sum_sq) = runs.iter().fold((0u128, 0u128), |(s, q), r| {
            (s + r.stop as u128, q + (r.stop as u128).pow(2))
        });
        let est = Estimate::from_moments(n, sum, sum_sq);
        let truncated = runs.iter().filter(|r| r.censored).count();
        Self {
            mean: est.value,
            std_err: est.std_err,
            n_reps: runs.len(),
            truncated_fraction: truncated as f64 / runs.len() as f64,
        }
    }
}

/// Pre-change stopping times of `n_reps` independent runs.
pub fn null_runs(
    rule: &ThresholdRule,
    model: &ObservationModel,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Vec<RunOutcome> {
    replicate(streams, n_reps, |rng| run_to_alarm(rule, model, ChangeSpec::Never, rng, limits))
}

/// Monte Carlo estimate of `E_inf N`.
pub fn estimate_arl2fa(
    rule: &ThresholdRule,
    model: &ObservationModel,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Result<ArlEstimate> {
    if n_reps < 2 {
        return Err(Error::InvalidParameter("ARL estimation needs at least 2 replications".into()));
    }
    let est = ArlEstimate::from_runs(&null_runs(rule, model, n_reps, streams, limits));
    if est.truncated_fraction > MAX_TRUNCATED_FRACTION {
        return Err(Error::CalibrationUnreliable {
            truncated_fraction: est.truncated_fraction,
            n_max: limits.n_max,
        });
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub rel_tol: f64,
    pub n_reps: usize,
    pub max_evaluations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { rel_tol: 0.02, n_reps: 10_000, max_evaluations: 200 }
    }
}

impl CalibrationOptions {
    pub fn new(rel_tol: f64, n_reps: usize) -> Self {
        Self { rel_tol, n_reps, ..Self::default() }
    }
}

/// A rule whose estimated ARL to false alarm matches the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibrated {
    pub rule: ThresholdRule,
    pub target: f64,
    pub rel_tol: f64,
    pub arl: ArlEstimate,
    pub evaluations: usize,
}

impl Calibrated {
    /// Whether the estimated ARL lies in `[B(1 - tol), B(1 + tol)]`.
    pub fn within_tolerance(&self, target: f64, rel_tol: f64) -> bool {
        (self.arl.mean - target).abs() <= rel_tol * target
    }
}

/// Finds a threshold with `E_inf N ~= target` (within `rel_tol`) by bisection.
///
/// Bracketing starts from `[1, B]` for SR and Shiryaev and `[1, ln B]` for
/// CUSUM (whose threshold lives on the log scale); the lower end is halved
/// and the upper end doubled until they straddle the target.
pub fn calibrate_threshold(
    kind: RuleKind,
    rho: Option<f64>,
    model: &ObservationModel,
    target: f64,
    opts: &CalibrationOptions,
    streams: &StreamFactory,
) -> Result<Calibrated> {
    if !(target >= 1.0 && target.is_finite()) {
        return Err(Error::InvalidParameter(format!("target ARL must be >= 1, got {target}")));
    }
    if !(opts.rel_tol > 0.0 && opts.rel_tol <= 0.1) {
        return Err(Error::InvalidParameter(format!(
            "rel_tol must lie in (0, 0.1], got {}",
            opts.rel_tol
        )));
    }
    if opts.n_reps < 2 {
        return Err(Error::InvalidParameter("calibration needs at least 2 replications".into()));
    }
    let limits = RunLimits::for_target(target);
    let band = (target * (1.0 - opts.rel_tol), target * (1.0 + opts.rel_tol));
    let template = ThresholdRule::new(kind, 1.0, rho)?;

    let mut evaluations = 0usize;
    let mut eval = |a: f64| -> Result<(ThresholdRule, ArlEstimate)> {
        evaluations += 1;
        if evaluations > opts.max_evaluations {
            return Err(Error::CalibrationFailed(format!(
                "no threshold found within {} evaluations",
                opts.max_evaluations
            )));
        }
        let rule = template.with_threshold(a)?;
        let est = ArlEstimate::from_runs(&null_runs(&rule, model, opts.n_reps, streams, limits));
        Ok((rule, est))
    };
    let accepted = |est: &ArlEstimate| {
        est.truncated_fraction <= MAX_TRUNCATED_FRACTION && est.mean >= band.0 && est.mean <= band.1
    };

    let mut lo = eval(1.0)?;
    while lo.1.mean > band.1 {
        let a = lo.0.threshold() / 2.0;
        if a < 1e-300 {
            return Err(Error::CalibrationFailed("ARL stays above target for all thresholds".into()));
        }
        lo = eval(a)?;
    }
    let hi_start = match kind {
        RuleKind::Cusum => target.ln().max(2.0),
        _ => target.max(2.0),
    };
    let mut hi = eval(hi_start.max(lo.0.threshold() * 2.0))?;
    while hi.1.mean < band.0 {
        hi = eval(hi.0.threshold() * 2.0)?;
    }

    let finish = |(rule, arl): (ThresholdRule, ArlEstimate), evaluations: usize| -> Result<Calibrated> {
        if arl.truncated_fraction > MAX_TRUNCATED_FRACTION {
            return Err(Error::CalibrationUnreliable {
                truncated_fraction: arl.truncated_fraction,
                n_max: limits.n_max,
            });
        }
        if kind == RuleKind::Sr && rule.threshold() > band.1 {
            return Err(Error::CalibrationFailed(format!(
                "SR threshold {} exceeds B(1 + tol) = {}; the ARL estimate {} is too noisy",
                rule.threshold(),
                band.1,
                arl.mean
            )));
        }
        Ok(Calibrated { rule, target, rel_tol: opts.rel_tol, arl, evaluations })
    };

    if accepted(&lo.1) {
        return finish(lo, evaluations);
    }
    if accepted(&hi.1) {
        return finish(hi, evaluations);
    }
    loop {
        let (a_lo, a_hi) = (lo.0.threshold(), hi.0.threshold());
        if (a_hi - a_lo) <= 1e-12 * a_hi {
            return Err(Error::CalibrationFailed(format!(
                "bracket [{a_lo}, {a_hi}] collapsed with ARL estimates {:.4} and {:.4} around target {target}; \
                 the ARL jumps over the tolerance band (discrete model or too few replications)",
                lo.1.mean, hi.1.mean
            )));
        }
        let mid = eval(0.5 * (a_lo + a_hi))?;
        if mid.1.mean < lo.1.mean || mid.1.mean > hi.1.mean {
            return Err(Error::CalibrationFailed(format!(
                "estimated ARL not monotone in the threshold: {:.4} at {}, {:.4} at {}, {:.4} at {}",
                lo.1.mean, a_lo, mid.1.mean, mid.0.threshold(), hi.1.mean, a_hi
            )));
        }
        if accepted(&mid.1) {
            return finish(mid, evaluations);
        }
        if mid.1.mean < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ObservationModel {
        ObservationModel::bernoulli(0.5, 0.75).unwrap()
    }

    #[test]
    fn toy_arl_is_two() {
        let rule = ThresholdRule::sr(1.4).unwrap();
        let est = estimate_arl2fa(&rule, &toy(), 20_000, &StreamFactory::new(1), RunLimits::for_target(2.0)).unwrap();
        assert!((est.mean - 2.0).abs() < 4.0 * est.std_err, "{est:?}");
        assert_eq!(est.truncated_fraction, 0.0);
    }

    #[test]
    fn eager_rule_has_unit_arl() {
        let rule = ThresholdRule::sr(0.4).unwrap();
        let est = estimate_arl2fa(&rule, &toy(), 1000, &StreamFactory::new(1), RunLimits::for_target(2.0)).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn gaussian_arl_respects_martingale_bound() {
        let g = ObservationModel::gaussian(1.0).unwrap();
        let rule = ThresholdRule::sr(10.0).unwrap();
        let est = estimate_arl2fa(&rule, &g, 5000, &StreamFactory::new(2), RunLimits::for_rule(&rule)).unwrap();
        assert!(est.mean >= 10.0 - 3.0 * est.std_err);
    }

    #[test]
    fn heavy_truncation_is_an_error() {
        let g = ObservationModel::gaussian(1.0).unwrap();
        let rule = ThresholdRule::sr(1e6).unwrap();
        let err = estimate_arl2fa(&rule, &g, 100, &StreamFactory::new(2), RunLimits { n_max: 10 }).unwrap_err();
        assert!(matches!(err, Error::CalibrationUnreliable { .. }));
        assert!(estimate_arl2fa(&rule, &g, 1, &StreamFactory::new(2), RunLimits { n_max: 10 }).is_err());
    }

    #[test]
    fn toy_calibration_accepts_the_flat_region() {
        let opts = CalibrationOptions::new(0.02, 20_000);
        let cal = calibrate_threshold(RuleKind::Sr, None, &toy(), 2.0, &opts, &StreamFactory::new(3)).unwrap();
        assert!(cal.rule.threshold() > 0.5 && cal.rule.threshold() <= 1.5);
        assert!(cal.within_tolerance(2.0, 0.02));
    }

    #[test]
    fn unit_target_halves_down_to_an_eager_rule() {
        let opts = CalibrationOptions::new(0.02, 1000);
        let cal = calibrate_threshold(RuleKind::Sr, None, &toy(), 1.0, &opts, &StreamFactory::new(3)).unwrap();
        assert!(cal.rule.threshold() <= toy().inf_likelihood_ratio());
        assert_eq!(cal.arl.mean, 1.0);
    }

    #[test]
    fn gaussian_calibration_is_reproducible_and_bounded() {
        let g = ObservationModel::gaussian(1.0).unwrap();
        let opts = CalibrationOptions::new(0.02, 4000);
        let a = calibrate_threshold(RuleKind::Sr, None, &g, 100.0, &opts, &StreamFactory::new(8)).unwrap();
        let b = calibrate_threshold(RuleKind::Sr, None, &g, 100.0, &opts, &StreamFactory::new(8)).unwrap();
        assert_eq!(a, b);
        assert!(a.rule.threshold() <= 100.0 * 1.02);
        assert!(a.within_tolerance(100.0, 0.02));

        let c = calibrate_threshold(RuleKind::Cusum, None, &g, 100.0, &opts, &StreamFactory::new(8)).unwrap();
        assert!(c.within_tolerance(100.0, 0.02));
        let s = calibrate_threshold(RuleKind::Shiryaev, Some(1e-3), &g, 100.0, &opts, &StreamFactory::new(8)).unwrap();
        assert!(s.within_tolerance(100.0, 0.02));
    }

    #[test]
    fn discrete_jumps_fail_with_diagnostic() {
        // The toy ARL takes the value 2 on (0.5, 1.5] and jumps above it.
        let opts = CalibrationOptions::new(0.01, 2000);
        let err = calibrate_threshold(RuleKind::Sr, None, &toy(), 2.5, &opts, &StreamFactory::new(3)).unwrap_err();
        assert!(matches!(err, Error::CalibrationFailed(_)), "{err:?}");
    }

    #[test]
    fn arl_is_monotone_in_threshold_under_common_random_numbers() {
        let g = ObservationModel::gaussian(1.0).unwrap();
        let streams = StreamFactory::new(12);
        let arls: Vec<f64> = [2.0, 5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&a| {
                let rule = ThresholdRule::sr(a).unwrap();
                estimate_arl2fa(&rule, &g, 2000, &streams, RunLimits::for_target(100.0)).unwrap().mean
            })
            .collect();
        assert!(arls.windows(2).all(|w| w[0] <= w[1]), "{arls:?}");
    }

    #[test]
    fn rejects_bad_options() {
        let g = ObservationModel::gaussian(1.0).unwrap();
        let s = StreamFactory::new(0);
        assert!(calibrate_threshold(RuleKind::Sr, None, &g, 0.5, &CalibrationOptions::default(), &s).is_err());
        assert!(calibrate_threshold(RuleKind::Sr, None, &g, 10.0, &CalibrationOptions::new(0.5, 100), &s).is_err());
    }
}
