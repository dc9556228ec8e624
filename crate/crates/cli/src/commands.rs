use serde::Serialize;

use quickdetect::calibration::{calibrate_threshold, CalibrationOptions, Calibrated};
use quickdetect::metrics::{
    burn_in_nu, compare_rules, expected_loss_cm, operating_characteristics, stationary_sample,
    GeometricPrior, LossSpec, OcOptions, AUTO_SURVIVAL_CUTOFF,
};
use quickdetect::verify::{self, Profile};
use quickdetect::{ChangeSpec, Estimate, Horizon, RuleKind, RunLimits, StreamFactory, ThresholdRule};

use crate::config::{ExperimentConfig, ThresholdSpec};
use crate::output::{render_csv, to_json, Row};
use crate::CliError;

const TAG_CALIBRATION: u64 = 1;
const TAG_EXPERIMENT: u64 = 2;

/// What a subcommand produced: a JSON document and optionally a CSV table.
pub struct Output {
    pub json: String,
    pub csv: Option<String>,
}

fn streams(cfg: &ExperimentConfig) -> (StreamFactory, StreamFactory) {
    let root = StreamFactory::new(cfg.seed);
    (root.derive(TAG_CALIBRATION), root.derive(TAG_EXPERIMENT))
}

/// A fixed-threshold rule, or one calibrated to the configured target.
fn resolve_rule(
    cfg: &ExperimentConfig,
    kind: RuleKind,
    cal_streams: &StreamFactory,
) -> Result<(ThresholdRule, Option<Calibrated>), CliError> {
    match cfg.threshold {
        ThresholdSpec::Fixed(a) => Ok((ThresholdRule::new(kind, a, cfg.rho)?, None)),
        ThresholdSpec::Target(b) => {
            let cal = calibrate(cfg, kind, b, cal_streams)?;
            Ok((cal.rule, Some(cal)))
        }
    }
}

fn calibrate(cfg: &ExperimentConfig, kind: RuleKind, b: f64, streams: &StreamFactory) -> Result<Calibrated, CliError> {
    let opts = CalibrationOptions::new(cfg.rel_tol, cfg.n_reps);
    Ok(calibrate_threshold(kind, cfg.rho, &cfg.model, b, &opts, streams)?)
}

fn limits_for(cfg: &ExperimentConfig, rule: &ThresholdRule) -> RunLimits {
    match cfg.threshold {
        ThresholdSpec::Target(b) => RunLimits::for_target(b),
        ThresholdSpec::Fixed(_) => RunLimits::for_rule(rule),
    }
}

#[derive(Serialize)]
struct CalibrationRecord {
    kind: RuleKind,
    #[serde(rename = "B")]
    target: f64,
    #[serde(rename = "A")]
    threshold: f64,
    rho: Option<f64>,
    arl_estimate: f64,
    std_err: f64,
    n_reps: usize,
    rel_tol: f64,
    evaluations: usize,
    seed: u64,
}

pub fn calibrate_cmd(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let kind = cfg.single_rule()?;
    let ThresholdSpec::Target(b) = cfg.threshold else {
        return Err(CliError::Usage("calibrate needs a target `B`, not a fixed `threshold`".into()));
    };
    let (cal_streams, _) = streams(cfg);
    let cal = calibrate(cfg, kind, b, &cal_streams)?;
    let record = CalibrationRecord {
        kind,
        target: b,
        threshold: cal.rule.threshold(),
        rho: cal.rule.rho(),
        arl_estimate: cal.arl.mean,
        std_err: cal.arl.std_err,
        n_reps: cal.arl.n_reps,
        rel_tol: cal.rel_tol,
        evaluations: cal.evaluations,
        seed: cfg.seed,
    };
    Ok(Output { json: to_json(&record), csv: None })
}

#[derive(Serialize)]
struct OcSummary {
    rule: String,
    kind: RuleKind,
    threshold: f64,
    calibrated_to: Option<f64>,
    arl2fa: Estimate,
    truncated_fraction: f64,
    integral_add: Estimate,
    integral_add_cm: Estimate,
    horizon: u64,
    horizon_auto: bool,
    survival_at_horizon: f64,
    survival_cutoff: f64,
    tail_bound: f64,
    sup_conditional_add: Option<Estimate>,
    stationary_add: Estimate,
    stationary_add_formula: Estimate,
    nu: u64,
    residual_tv: f64,
    bayes_loss: Option<BayesLoss>,
    n_reps: usize,
    seed: u64,
}

#[derive(Serialize)]
struct BayesLoss {
    rho: f64,
    c: f64,
    loss: Estimate,
}

pub fn oc_cmd(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let kind = cfg.single_rule()?;
    let (cal_streams, exp_streams) = streams(cfg);
    let (rule, cal) = resolve_rule(cfg, kind, &cal_streams)?;
    let nu = match cfg.nu {
        None => None,
        Some(ChangeSpec::At(k)) => Some(k),
        Some(ChangeSpec::Never) => {
            return Err(CliError::Usage("oc needs a finite `nu` for the stationary delay".into()))
        }
    };
    let limits = limits_for(cfg, &rule);
    let opts = OcOptions { horizon: cfg.horizon, n_reps: cfg.n_reps, nu, limits };
    let oc = operating_characteristics(&rule, &cfg.model, &opts, &exp_streams)?;

    let bayes_loss = match (cfg.c, cfg.rho) {
        (Some(c), Some(rho)) => {
            let loss = LossSpec::new(c, GeometricPrior::new(rho)?)?;
            let est = expected_loss_cm(&rule, &cfg.model, &loss, cfg.n_reps, &exp_streams, limits);
            Some(BayesLoss { rho, c, loss: est })
        }
        _ => None,
    };

    let label = rule.label();
    let n = cfg.n_reps;
    let row = |metric, k, e: Estimate| Row { rule: label.clone(), metric, k, estimate: e.value, std_err: Some(e.std_err), n_reps: n };
    let plain = |metric, k, v: f64| Row { rule: label.clone(), metric, k, estimate: v, std_err: None, n_reps: n };
    let mut rows = vec![
        row("arl2fa", None, oc.arl2fa.as_estimate()),
        row("integral_add", None, oc.integral_add.estimate),
        row("integral_add_cm", None, oc.integral_add_cm.estimate),
        row("stationary_add", None, oc.stationary_add),
        row("stationary_add_formula", None, oc.stationary_add_formula),
    ];
    if let Some(e) = oc.sup_conditional_add {
        rows.push(row("sup_conditional_add", None, e));
    }
    if let Some(b) = &bayes_loss {
        rows.push(row("bayes_loss", None, b.loss));
    }
    for (i, e) in oc.unconditional_add.iter().enumerate() {
        rows.push(row("unconditional_add", Some(i as u64 + 1), *e));
    }
    for (i, e) in oc.conditional_add.iter().enumerate() {
        if let Some(e) = e {
            rows.push(row("conditional_add", Some(i as u64 + 1), *e));
        }
    }
    for (i, &p) in oc.survival.iter().enumerate() {
        rows.push(plain("survival", Some(i as u64 + 1), p));
    }
    for (i, &w) in oc.weights.iter().enumerate() {
        rows.push(plain("weight", Some(i as u64 + 1), w));
    }
    for (i, &p) in oc.residual_time.iter().enumerate() {
        rows.push(plain("residual_time", Some(i as u64 + 1), p));
    }

    let summary = OcSummary {
        rule: label.clone(),
        kind,
        threshold: rule.threshold(),
        calibrated_to: cal.map(|c| c.target),
        arl2fa: oc.arl2fa.as_estimate(),
        truncated_fraction: oc.arl2fa.truncated_fraction,
        integral_add: oc.integral_add.estimate,
        integral_add_cm: oc.integral_add_cm.estimate,
        horizon: oc.integral_add.horizon,
        horizon_auto: cfg.horizon == Horizon::Auto,
        survival_at_horizon: oc.integral_add.survival_at_horizon,
        survival_cutoff: AUTO_SURVIVAL_CUTOFF,
        tail_bound: oc.integral_add.tail_bound,
        sup_conditional_add: oc.sup_conditional_add,
        stationary_add: oc.stationary_add,
        stationary_add_formula: oc.stationary_add_formula,
        nu: oc.nu,
        residual_tv: oc.residual_tv,
        bayes_loss,
        n_reps: n,
        seed: cfg.seed,
    };
    Ok(Output { json: to_json(&summary), csv: Some(render_csv(&rows, cfg.seed)) })
}

#[derive(Serialize)]
struct CompareSummary {
    #[serde(flatten)]
    report: quickdetect::metrics::ComparisonReport,
    n_reps: usize,
    seed: u64,
}

pub fn compare_cmd(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    if cfg.rules.len() < 2 {
        return Err(CliError::Usage("compare needs at least two entries in `rules`".into()));
    }
    let ThresholdSpec::Target(b) = cfg.threshold else {
        return Err(CliError::Usage("compare calibrates every rule and needs a target `B`".into()));
    };
    let (cal_streams, exp_streams) = streams(cfg);
    let calibrated = cfg
        .rules
        .iter()
        .map(|&kind| calibrate(cfg, kind, b, &cal_streams))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare_rules(&calibrated, &cfg.model, b, cfg.rel_tol, cfg.horizon, cfg.n_reps, &exp_streams)?;
    let n = cfg.n_reps;
    let mut rows = Vec::new();
    for r in &report.rows {
        let row = |metric, e: Estimate| Row { rule: r.label.clone(), metric, k: None, estimate: e.value, std_err: Some(e.std_err), n_reps: n };
        rows.push(row("arl2fa", r.arl.as_estimate()));
        rows.push(row("integral_add", r.integral_add));
        rows.push(row("stationary_add", r.stationary_add));
    }
    let summary = CompareSummary { report, n_reps: n, seed: cfg.seed };
    Ok(Output { json: to_json(&summary), csv: Some(render_csv(&rows, cfg.seed)) })
}

#[derive(Serialize)]
struct MulticyclicSummary {
    rule: String,
    nu: u64,
    n_reps: usize,
    completed: usize,
    truncated: usize,
    stationary_add: Estimate,
    seed: u64,
}

pub fn multicyclic_cmd(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let kind = cfg.single_rule()?;
    let (cal_streams, exp_streams) = streams(cfg);
    let (rule, cal) = resolve_rule(cfg, kind, &cal_streams)?;
    let limits = limits_for(cfg, &rule);
    let nu = match cfg.nu {
        Some(ChangeSpec::At(k)) => k,
        Some(ChangeSpec::Never) => {
            return Err(CliError::Usage("multicyclic needs a finite `nu`".into()));
        }
        None => match (cal, cfg.threshold) {
            (Some(c), _) => burn_in_nu(c.arl.mean),
            (None, ThresholdSpec::Target(b)) => burn_in_nu(b),
            (None, ThresholdSpec::Fixed(_)) => {
                return Err(CliError::Usage("multicyclic with a fixed threshold needs `nu`".into()));
            }
        },
    };
    let sample = stationary_sample(&rule, &cfg.model, nu, cfg.n_reps, &exp_streams, limits.n_max)?;
    let label = rule.label();
    let completed = sample.delays.len();
    let delay = sample.mean_delay();
    let mut rows = vec![Row {
        rule: label.clone(),
        metric: "stationary_add",
        k: None,
        estimate: delay.value,
        std_err: Some(delay.std_err),
        n_reps: cfg.n_reps,
    }];
    for (i, &p) in sample.residual_masses().iter().enumerate() {
        rows.push(Row {
            rule: label.clone(),
            metric: "residual_time",
            k: Some(i as u64 + 1),
            estimate: p,
            std_err: Some((p * (1.0 - p) / completed as f64).sqrt()),
            n_reps: cfg.n_reps,
        });
    }
    let summary = MulticyclicSummary {
        rule: label,
        nu,
        n_reps: cfg.n_reps,
        completed,
        truncated: sample.truncated,
        stationary_add: delay,
        seed: cfg.seed,
    };
    Ok(Output { json: to_json(&summary), csv: Some(render_csv(&rows, cfg.seed)) })
}

/// Runs the self-checks; the report is one JSON object per line.
pub fn verify_cmd(profile: Profile, seed: u64) -> (String, bool) {
    let report = verify::run(profile, seed);
    (report.to_json_lines(), report.passed())
}
