use quickdetect::calibration::null_runs;
use quickdetect::metrics::{compare_rules, delay_profile, operating_characteristics, OcOptions, Survival};
use quickdetect::{
    calibrate_threshold, CalibrationOptions, Horizon, ObservationModel, RuleKind, RunLimits, StreamFactory,
    ThresholdRule,
};

fn calibrated(kind: RuleKind, model: &ObservationModel, b: f64, streams: &StreamFactory) -> quickdetect::Calibrated {
    calibrate_threshold(kind, None, model, b, &CalibrationOptions::new(0.02, 10_000), streams).unwrap()
}

#[test]
fn sr_never_loses_to_cusum_at_matched_arl() {
    let root = StreamFactory::new(7);
    for (i, theta) in [0.5, 1.0].into_iter().enumerate() {
        let model = ObservationModel::gaussian(theta).unwrap();
        for (j, b) in [50.0, 100.0].into_iter().enumerate() {
            let s = root.derive(10 * i as u64 + j as u64);
            let sr = calibrated(RuleKind::Sr, &model, b, &s.derive(1));
            let cusum = calibrated(RuleKind::Cusum, &model, b, &s.derive(2));
            let report = compare_rules(&[sr, cusum], &model, b, 0.02, Horizon::Auto, 10_000, &s.derive(3)).unwrap();
            assert!(report.violations.is_empty(), "theta {theta}, B {b}: {:?}", report.violations);
        }
    }
}

#[test]
fn stationary_delay_grows_with_arl() {
    let model = ObservationModel::gaussian(1.0).unwrap();
    let root = StreamFactory::new(11);
    let delays: Vec<_> = [25.0, 50.0, 100.0, 200.0]
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let s = root.derive(i as u64);
            let rule = calibrated(RuleKind::Sr, &model, b, &s.derive(1)).rule;
            let limits = RunLimits::for_target(b);
            let surv = Survival::from_runs(&null_runs(&rule, &model, 20_000, &s.derive(2), limits));
            delay_profile(&rule, &model, surv.auto_horizon(), 20_000, &s.derive(3), limits).stationary_ratio()
        })
        .collect();
    for w in delays.windows(2) {
        assert!(w[1].value >= w[0].value - 3.0 * w[0].combined_std_err(&w[1]), "{delays:?}");
    }
}

/// Trapezoid rule for `int_lo^hi f`.
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

#[test]
fn likelihood_ratio_has_unit_null_mean() {
    for theta in [0.5, 1.0, 2.0] {
        let model = ObservationModel::gaussian(theta).unwrap();
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let m = integrate(|x| phi(x) * model.likelihood_ratio(x).unwrap(), -20.0, 20.0, 200_000);
        assert!((m - 1.0).abs() < 1e-9, "gaussian theta {theta}: {m}");
        let kl = integrate(|x| phi(x) * model.log_likelihood_ratio(x).unwrap(), -20.0, 20.0, 200_000);
        assert!((kl + 0.5 * theta * theta).abs() < 1e-9, "gaussian theta {theta}: {kl}");
    }
    for rate1 in [0.5, 2.0] {
        let model = ObservationModel::exponential(1.0, rate1).unwrap();
        let m = integrate(|x| (-x).exp() * model.likelihood_ratio(x).unwrap(), 0.0, 80.0, 400_000);
        assert!((m - 1.0).abs() < 1e-6, "exponential rate {rate1}: {m}");
    }
    let model = ObservationModel::bernoulli(0.2, 0.4).unwrap();
    let m = 0.8 * model.likelihood_ratio(0.0).unwrap() + 0.2 * model.likelihood_ratio(1.0).unwrap();
    assert!((m - 1.0).abs() < 1e-12);
}

#[test]
fn instant_detection_has_zero_delays() {
    let model = ObservationModel::bernoulli(0.5, 1.0 - 1e-12).unwrap();
    let rule = ThresholdRule::sr(1.5).unwrap();
    let opts = OcOptions { horizon: Horizon::Auto, n_reps: 2_000, nu: None, limits: RunLimits::for_rule(&rule) };
    let oc = operating_characteristics(&rule, &model, &opts, &StreamFactory::new(3)).unwrap();
    assert_eq!(oc.integral_add.estimate.value, 0.0);
    assert_eq!(oc.stationary_add.value, 0.0);
    assert_eq!(oc.stationary_add_formula.value, 0.0);
    assert!(oc.unconditional_add.iter().all(|e| e.value == 0.0));
}

#[test]
fn auto_horizon_meets_cutoff() {
    let model = ObservationModel::gaussian(1.0).unwrap();
    let rule = ThresholdRule::sr(30.0).unwrap();
    let opts = OcOptions { horizon: Horizon::Auto, n_reps: 5_000, nu: None, limits: RunLimits::for_rule(&rule) };
    let oc = operating_characteristics(&rule, &model, &opts, &StreamFactory::new(5)).unwrap();
    assert!(oc.integral_add.survival_at_horizon < 1e-4);
    let k = oc.integral_add.horizon as usize;
    assert!(oc.survival.iter().take(k - 1).all(|&p| p >= 1e-4));
}
