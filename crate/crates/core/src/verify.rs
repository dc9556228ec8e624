//! Self-check suite.
//!
//! Each check compares an estimate with an exact value or with a second,
//! independent estimate. A [`Report`] renders as one JSON object per line and
//! depends only on the seed: every Monte Carlo quantity is drawn from
//! substreams derived from it.

use serde::Serialize;

use crate::calibration::{calibrate_threshold, estimate_arl2fa, null_runs, CalibrationOptions};
use crate::detectors::{RuleKind, RunLimits, SrState, ThresholdRule};
use crate::error::Result;
use crate::metrics::{
    bayes_limit_gaps, burn_in_nu, compare_rules, delay_profile, integral_add_cm,
    integral_add_direct, mixture_add_experiment, stationary_sample, Horizon, Survival,
};
use crate::models::ObservationModel;
use crate::oracle::{add_identity, null_mean_sr, sr_recursion_error};
use crate::rng::StreamFactory;
use crate::stats::{total_variation, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Enumeration oracles and the toy model.
    Quick,
    /// Every acceptance check.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Self::Quick),
            "full" => Ok(Self::Full),
            other => Err(crate::Error::InvalidParameter(format!("unknown profile {other:?}"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Quick => "quick",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub criterion: u8,
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(criterion: u8, id: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { criterion, id: id.into(), passed, detail: detail.into() }
    }

    fn failed(criterion: u8, id: impl Into<String>, err: &crate::Error) -> Self {
        Self::new(criterion, id, false, format!("error: {err}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub profile: Profile,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One JSON object per check, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&serde_json::to_string(c).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

/// Runs the checks of `profile`.
pub fn run(profile: Profile, seed: u64) -> Report {
    let root = StreamFactory::new(seed);
    let mut checks = exact_oracles();
    checks.extend(toy_monte_carlo(100_000, &root.derive(1)));
    match profile {
        Profile::Quick => {
            checks.push(residual_law_toy(100_000, &root.derive(4)));
            checks.push(bayes_limit(100_000, &root.derive(5)));
            checks.extend(cross_estimators(&toy_matrix(), 100_000, &root.derive(7)));
        }
        Profile::Full => {
            checks.push(integral_ranking(100_000, &root.derive(2)));
            checks.extend(stationary_consistency(&[50.0, 100.0], 10_000, &root.derive(3)));
            checks.push(residual_law_toy(100_000, &root.derive(4)));
            checks.push(residual_law_gaussian(100_000, &root.derive(41)));
            checks.push(bayes_limit(100_000, &root.derive(5)));
            checks.push(mixture_identity(20_000, &root.derive(6)));
            checks.extend(cross_estimators(&default_matrix(), 100_000, &root.derive(7)));
            checks.extend(calibration_bound(10_000, &root.derive(8)));
        }
    }
    Report { profile, seed, checks }
}

fn toy() -> ObservationModel {
    ObservationModel::bernoulli(0.5, 0.75).expect("valid toy model")
}

fn toy_rule() -> ThresholdRule {
    ThresholdRule::sr(1.4).expect("valid threshold")
}

fn gaussian() -> ObservationModel {
    ObservationModel::gaussian(1.0).expect("valid gaussian model")
}

/// Largest enumerated path length.
const ORACLE_LEN: usize = 12;

/// Recursive SR update as implemented by the detector.
pub fn library_sr_update(r: f64, lr: f64) -> f64 {
    SrState::from_value(r).advance(lr).value()
}

/// Recursion against the sum-of-products on every toy path of length 12.
pub fn recursion_check<F: Fn(f64, f64) -> f64>(update: F) -> CheckResult {
    match sr_recursion_error(&toy(), ORACLE_LEN, update) {
        Ok(err) => CheckResult::new(1, "1a", err <= 1e-10, format!("max relative error {err:.3e}")),
        Err(e) => CheckResult::failed(1, "1a", &e),
    }
}

/// Criterion 1 (a)-(c): exact enumeration.
pub fn exact_oracles() -> Vec<CheckResult> {
    let model = toy();
    let mut out = vec![recursion_check(library_sr_update)];

    let worst = (1..=ORACLE_LEN)
        .map(|n| null_mean_sr(&model, n).map(|m| (m - n as f64).abs()))
        .collect::<Result<Vec<_>>>();
    out.push(match worst {
        Ok(w) => {
            let w = w.into_iter().fold(0.0, f64::max);
            CheckResult::new(1, "1b", w <= 1e-9, format!("max |E R_n - n| {w:.3e}"))
        }
        Err(e) => CheckResult::failed(1, "1b", &e),
    });

    let ids = (1..=6)
        .map(|k| add_identity(&toy_rule(), &model, k, ORACLE_LEN))
        .collect::<Result<Vec<_>>>();
    out.push(match ids {
        Ok(ids) => {
            let w = ids.iter().map(|i| (i.conditional_times_survival - i.positive_part).abs()).fold(0.0, f64::max);
            CheckResult::new(1, "1c", w <= 1e-12, format!("max identity gap {w:.3e} over k <= 6"))
        }
        Err(e) => CheckResult::failed(1, "1c", &e),
    });
    out
}

fn covers(id: &str, name: &str, est: Estimate, exact: f64, sigmas: f64) -> CheckResult {
    CheckResult::new(
        1,
        id,
        est.covers(exact, sigmas),
        format!("{name} {:.6} ± {:.6}, exact {exact:.6}", est.value, est.std_err),
    )
}

/// Criterion 1 (d): toy Monte Carlo against exact values, 4 standard errors.
pub fn toy_monte_carlo(n_reps: usize, streams: &StreamFactory) -> Vec<CheckResult> {
    let (model, rule) = (toy(), toy_rule());
    let limits = RunLimits::for_target(2.0);
    let mut out = Vec::new();
    out.push(match estimate_arl2fa(&rule, &model, n_reps, &streams.derive(1), limits) {
        Ok(a) => covers("1d.arl", "ARL", a.as_estimate(), 2.0, 4.0),
        Err(e) => CheckResult::failed(1, "1d.arl", &e),
    });
    out.push(match integral_add_direct(&rule, &model, Horizon::Auto, n_reps, &streams.derive(2), limits) {
        Ok(i) => covers("1d.integral", "integral ADD", i.estimate, 2.0 / 3.0, 4.0),
        Err(e) => CheckResult::failed(1, "1d.integral", &e),
    });
    let nu = burn_in_nu(2.0);
    match stationary_sample(&rule, &model, nu, n_reps, &streams.derive(3), limits.n_max) {
        Ok(s) => {
            out.push(covers("1d.stationary", "stationary ADD", s.mean_delay(), 1.0 / 3.0, 4.0));
            let masses = s.residual_masses();
            let n = s.ages.len() as f64;
            let worst = (1..=12)
                .map(|k| {
                    let p = 0.5f64.powi(k);
                    let got = masses.get(k as usize - 1).copied().unwrap_or(0.0);
                    (got - p).abs() / (p * (1.0 - p) / n).sqrt()
                })
                .fold(0.0, f64::max);
            out.push(CheckResult::new(
                1,
                "1d.residual",
                worst <= 4.0,
                format!("largest |z| {worst:.3} over residual masses k <= 12"),
            ));
        }
        Err(e) => {
            out.push(CheckResult::failed(1, "1d.stationary", &e));
            out.push(CheckResult::failed(1, "1d.residual", &e));
        }
    }
    out
}

fn calibrate(kind: RuleKind, model: &ObservationModel, target: f64, n_reps: usize, streams: &StreamFactory) -> Result<crate::Calibrated> {
    calibrate_threshold(kind, None, model, target, &CalibrationOptions::new(0.02, n_reps), streams)
}

/// Criterion 2: SR has the smaller integral delay against CUSUM at ARL 100.
pub fn integral_ranking(n_reps: usize, streams: &StreamFactory) -> CheckResult {
    let model = gaussian();
    let run = || -> Result<CheckResult> {
        let sr = calibrate(RuleKind::Sr, &model, 100.0, n_reps, &streams.derive(1))?;
        let cusum = calibrate(RuleKind::Cusum, &model, 100.0, n_reps, &streams.derive(2))?;
        let report = compare_rules(&[sr, cusum], &model, 100.0, 0.02, Horizon::Auto, n_reps, &streams.derive(3))?;
        let (a, b) = (report.rows[0].integral_add, report.rows[1].integral_add);
        let passed = a.value <= b.value + 3.0 * a.combined_std_err(&b) && a.value < b.value;
        Ok(CheckResult::new(
            2,
            "2",
            passed,
            format!(
                "SR A={:.6} ARL {:.3}: {a}; CUSUM h={:.6} ARL {:.3}: {b}",
                sr.rule.threshold(),
                sr.arl.mean,
                cusum.rule.threshold(),
                cusum.arl.mean
            ),
        ))
    };
    run().unwrap_or_else(|e| CheckResult::failed(2, "2", &e))
}

/// Criterion 3: direct stationary delay at `nu = 10 B` against the ratio
/// formula, 2 combined standard errors.
pub fn stationary_consistency(targets: &[f64], n_reps: usize, streams: &StreamFactory) -> Vec<CheckResult> {
    let model = gaussian();
    targets
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let id = format!("3.B{b}");
            let s = streams.derive(i as u64);
            let run = || -> Result<CheckResult> {
                let cal = calibrate(RuleKind::Sr, &model, b, n_reps, &s.derive(1))?;
                let limits = RunLimits::for_target(b);
                let direct = stationary_sample(&cal.rule, &model, burn_in_nu(b), n_reps, &s.derive(2), limits.n_max)?
                    .mean_delay();
                let formula_reps = 10 * n_reps;
                let surv = Survival::from_runs(&null_runs(&cal.rule, &model, formula_reps, &s.derive(3), limits));
                let formula = delay_profile(&cal.rule, &model, surv.auto_horizon(), formula_reps, &s.derive(4), limits)
                    .stationary_ratio();
                let z = direct.z_against(&formula);
                Ok(CheckResult::new(
                    3,
                    id.clone(),
                    z.abs() <= 2.0,
                    format!("direct {direct}, formula {formula}, z {z:.3}"),
                ))
            };
            run().unwrap_or_else(|e| CheckResult::failed(3, id.clone(), &e))
        })
        .collect()
}

fn residual_law(
    id: &str,
    rule: &ThresholdRule,
    model: &ObservationModel,
    bound: f64,
    n_reps: usize,
    streams: &StreamFactory,
) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let limits = RunLimits::for_rule(rule);
        let surv = Survival::from_runs(&null_runs(rule, model, n_reps, &streams.derive(1), limits));
        let nu = burn_in_nu(surv.mean());
        let sample = stationary_sample(rule, model, nu, n_reps, &streams.derive(2), limits.n_max)?;
        let tv = total_variation(&sample.residual_masses(), &surv.weights(surv.probs.len() as u64));
        Ok(CheckResult::new(4, id, tv <= bound, format!("TV {tv:.5} (bound {bound}), nu {nu}")))
    };
    run().unwrap_or_else(|e| CheckResult::failed(4, id, &e))
}

/// Criterion 4, toy model.
pub fn residual_law_toy(n_reps: usize, streams: &StreamFactory) -> CheckResult {
    residual_law("4.toy", &toy_rule(), &toy(), 0.02, n_reps, streams)
}

/// Criterion 4, gaussian SR calibrated to ARL 50.
pub fn residual_law_gaussian(n_reps: usize, streams: &StreamFactory) -> CheckResult {
    let model = gaussian();
    match calibrate(RuleKind::Sr, &model, 50.0, 10_000, &streams.derive(9)) {
        Ok(cal) => residual_law("4.gaussian", &cal.rule, &model, 0.05, n_reps, streams),
        Err(e) => CheckResult::failed(4, "4.gaussian", &e),
    }
}

/// Criterion 5: the scaled Bayes gain approaches its limit as `rho` shrinks.
pub fn bayes_limit(n_reps: usize, streams: &StreamFactory) -> CheckResult {
    let rule = toy_rule();
    match bayes_limit_gaps(&rule, &toy(), 0.01, &[1e-2, 1e-3], n_reps, streams, RunLimits::for_target(2.0)) {
        Ok(g) => CheckResult::new(
            5,
            "5",
            g[1].gap.value.abs() < g[0].gap.value.abs(),
            format!("gap at rho=1e-2 {}, at rho=1e-3 {}", g[0].gap, g[1].gap),
        ),
        Err(e) => CheckResult::failed(5, "5", &e),
    }
}

/// Criterion 6: the randomized two-threshold rule on gaussian data.
pub fn mixture_identity(n_reps: usize, streams: &StreamFactory) -> CheckResult {
    let model = gaussian();
    let run = || -> Result<CheckResult> {
        let r1 = calibrate(RuleKind::Sr, &model, 50.0, 10_000, &streams.derive(1))?;
        let r2 = calibrate(RuleKind::Sr, &model, 150.0, 10_000, &streams.derive(2))?;
        let nu = burn_in_nu(150.0);
        let rep = mixture_add_experiment(&r1.rule, &r2.rule, &model, nu, n_reps, &streams.derive(3), RunLimits::for_target(150.0).n_max)?;
        Ok(CheckResult::new(
            6,
            "6",
            rep.z_add.abs() <= 3.0 && rep.z_covering.abs() <= 3.0,
            format!(
                "mixture {} vs convex {} (z {:.3}); covering share {} vs {:.5} (z {:.3})",
                rep.mixture_add, rep.convex_prediction, rep.z_add, rep.covering_first, rep.predicted_covering_first, rep.z_covering
            ),
        ))
    };
    run().unwrap_or_else(|e| CheckResult::failed(6, "6", &e))
}

/// A named model with a fixed-threshold rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEntry {
    pub name: &'static str,
    pub model: ObservationModel,
    pub rule: ThresholdRule,
}

fn entry(name: &'static str, model: ObservationModel, rule: ThresholdRule) -> MatrixEntry {
    MatrixEntry { name, model, rule }
}

/// Toy model with `A = 1.4`.
pub fn toy_matrix() -> Vec<MatrixEntry> {
    vec![entry("bernoulli(0.5,0.75) SR 1.4", toy(), toy_rule())]
}

/// Models and rules exercised by the cross-estimator check: every family,
/// every rule kind, thresholds near an ARL of 50.
pub fn default_matrix() -> Vec<MatrixEntry> {
    let g1 = gaussian();
    let g05 = ObservationModel::gaussian(0.5).expect("valid");
    let bern = ObservationModel::bernoulli(0.2, 0.4).expect("valid");
    let expo = ObservationModel::exponential(1.0, 0.5).expect("valid");
    let sr = ThresholdRule::sr(50.0).expect("valid");
    let cusum = ThresholdRule::cusum(50f64.ln()).expect("valid");
    let shiryaev = ThresholdRule::shiryaev(0.01, 50.0).expect("valid");
    let mut m = toy_matrix();
    m.extend([
        entry("gaussian(1) SR 50", g1, sr),
        entry("gaussian(1) CUSUM ln 50", g1, cusum),
        entry("gaussian(1) Shiryaev 0.01/50", g1, shiryaev),
        entry("gaussian(0.5) SR 50", g05, sr),
        entry("gaussian(0.5) CUSUM ln 50", g05, cusum),
        entry("bernoulli(0.2,0.4) SR 50", bern, sr),
        entry("bernoulli(0.2,0.4) CUSUM ln 50", bern, cusum),
        entry("exponential(1,0.5) SR 50", expo, sr),
        entry("exponential(1,0.5) CUSUM ln 50", expo, cusum),
    ]);
    m
}

/// Criterion 7: direct and change-of-measure integral delays agree within 3
/// combined standard errors.
pub fn cross_estimators(matrix: &[MatrixEntry], n_reps: usize, streams: &StreamFactory) -> Vec<CheckResult> {
    matrix
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let id = format!("7.{i}");
            let s = streams.derive(i as u64);
            let limits = RunLimits::for_rule(&e.rule);
            match integral_add_direct(&e.rule, &e.model, Horizon::Auto, n_reps, &s, limits) {
                Ok(direct) => {
                    let cm = integral_add_cm(&e.rule, &e.model, n_reps, &s, limits).estimate;
                    let z = direct.estimate.z_against(&cm);
                    CheckResult::new(
                        7,
                        id,
                        z.abs() <= 3.0,
                        format!("{}: direct {}, change of measure {cm}, z {z:.3}", e.name, direct.estimate),
                    )
                }
                Err(err) => CheckResult::failed(7, id, &err),
            }
        })
        .collect()
}

/// Criterion 8: calibrated SR thresholds stay below `B(1 + tol)` and
/// `E_inf N_A >= A` up to 3 standard errors.
pub fn calibration_bound(n_reps: usize, streams: &StreamFactory) -> Vec<CheckResult> {
    let families: [(&str, ObservationModel); 4] = [
        ("gaussian(1)", gaussian()),
        ("bernoulli(0.5,0.75)", toy()),
        ("bernoulli(0.2,0.4)", ObservationModel::bernoulli(0.2, 0.4).expect("valid")),
        ("exponential(1,0.5)", ObservationModel::exponential(1.0, 0.5).expect("valid")),
    ];
    let mut out = Vec::new();
    for (i, (name, model)) in families.iter().enumerate() {
        let s = streams.derive(i as u64);
        for (j, b) in [10.0, 50.0].into_iter().enumerate() {
            let id = format!("8.{name}.B{b}");
            out.push(match calibrate(RuleKind::Sr, model, b, n_reps, &s.derive(j as u64)) {
                Ok(c) => CheckResult::new(
                    8,
                    id,
                    c.rule.threshold() <= b * 1.02,
                    format!("A {:.6}, ARL {:.4} ± {:.4}", c.rule.threshold(), c.arl.mean, c.arl.std_err),
                ),
                Err(e) => CheckResult::failed(8, id, &e),
            });
        }
        for (j, a) in [2.0, 10.0, 50.0].into_iter().enumerate() {
            let id = format!("8.{name}.A{a}");
            let rule = ThresholdRule::sr(a).expect("valid");
            out.push(match estimate_arl2fa(&rule, model, n_reps, &s.derive(10 + j as u64), RunLimits::for_rule(&rule)) {
                Ok(e) => CheckResult::new(
                    8,
                    id,
                    e.mean >= a - 3.0 * e.std_err,
                    format!("ARL {:.4} ± {:.4}", e.mean, e.std_err),
                ),
                Err(err) => CheckResult::failed(8, id, &err),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_checks_pass_and_mutation_fails() {
        assert!(exact_oracles().iter().all(|c| c.passed));
        assert!(!recursion_check(|r, lr| r * lr).passed);
    }

    #[test]
    fn profile_round_trip() {
        for p in [Profile::Quick, Profile::Full] {
            assert_eq!(p.to_string().parse::<Profile>().unwrap(), p);
        }
        assert!("medium".parse::<Profile>().is_err());
    }
}
