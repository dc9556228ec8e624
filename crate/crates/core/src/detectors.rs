//! Detection statistics, single-run stopping and repeated (multi-cyclic)
//! application.
//!
//! * Shiryaev-Roberts: `R_n = (1 + R_{n-1}) * L_n`, `R_0 = 0`, alarm at `R_n >= A`.
//! * Shiryaev: `R_{rho,n} = (1 + R_{rho,n-1}) * L_n / (1 - rho)`; the posterior
//!   probability that the change has happened is `R / (R + 1/rho)`.
//! * CUSUM (Page): `W_n = max(0, W_{n-1} + log L_n)`, alarm at `W_n >= a`.
//!
//! Here `L_n = f1(X_n) / f0(X_n)`. All comparisons with the threshold are
//! inclusive.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ChangeSpec, LrStep, ObservationModel};
use crate::rng::StreamRng;

/// SR thresholds above this run the statistic in the log domain.
pub const LOG_DOMAIN_THRESHOLD: f64 = 1e12;

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("likelihood ratio must be positive and finite, got {lr}")))
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Shiryaev-Roberts statistic in the linear domain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SrState {
    r: f64,
    n: u64,
}

impl SrState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> f64 {
        self.r
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn update(self, lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(self.advance(lr))
    }

    pub(crate) fn from_value(r: f64) -> Self {
        Self { r, n: 0 }
    }

    #[inline]
    pub(crate) fn advance(self, lr: f64) -> Self {
        Self { r: (1.0 + self.r) * lr, n: self.n + 1 }
    }
}

/// Shiryaev-Roberts statistic carried as `log R_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSrState {
    log_r: f64,
    n: u64,
}

impl Default for LogSrState {
    fn default() -> Self {
        Self { log_r: f64::NEG_INFINITY, n: 0 }
    }
}

impl LogSrState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log_value(&self) -> f64 {
        self.log_r
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn update(self, log_lr: f64) -> Result<Self> {
        if !log_lr.is_finite() {
            return Err(Error::Domain(format!("log likelihood ratio must be finite, got {log_lr}")));
        }
        Ok(self.advance(log_lr))
    }

    #[inline]
    pub(crate) fn advance(self, log_lr: f64) -> Self {
        Self { log_r: log_lr + softplus(self.log_r), n: self.n + 1 }
    }
}

/// Shiryaev statistic under a geometric(`rho`) prior on the changepoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiryaevState {
    r_rho: f64,
    rho: f64,
    n: u64,
}

impl ShiryaevState {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho must lie in [0, 1), got {rho}")));
        }
        Ok(Self { r_rho: 0.0, rho, n: 0 })
    }

    pub fn value(&self) -> f64 {
        self.r_rho
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn update(self, lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(self.advance(lr))
    }

    #[inline]
    pub(crate) fn advance(self, lr: f64) -> Self {
        Self { r_rho: (1.0 + self.r_rho) * lr / (1.0 - self.rho), rho: self.rho, n: self.n + 1 }
    }

    /// Posterior probability that the change has already happened.
    pub fn posterior(&self) -> Result<f64> {
        if self.rho == 0.0 {
            return Err(Error::UndefinedPosterior);
        }
        if self.r_rho.is_infinite() {
            return Ok(1.0);
        }
        Ok(self.r_rho / (self.r_rho + 1.0 / self.rho))
    }
}

/// Page's CUSUM statistic.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CusumState {
    w: f64,
    n: u64,
}

impl CusumState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> f64 {
        self.w
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn update(self, log_lr: f64) -> Result<Self> {
        if !log_lr.is_finite() {
            return Err(Error::Domain(format!("log likelihood ratio must be finite, got {log_lr}")));
        }
        Ok(self.advance(log_lr))
    }

    #[inline]
    pub(crate) fn advance(self, log_lr: f64) -> Self {
        Self { w: (self.w + log_lr).max(0.0), n: self.n + 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Sr,
    Shiryaev,
    Cusum,
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sr => "sr",
            Self::Shiryaev => "shiryaev",
            Self::Cusum => "cusum",
        })
    }
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Self::Sr),
            "shiryaev" => Ok(Self::Shiryaev),
            "cusum" => Ok(Self::Cusum),
            other => Err(Error::InvalidParameter(format!("unknown rule kind `{other}`"))),
        }
    }
}

/// A detection statistic together with its alarm threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    kind: RuleKind,
    threshold: f64,
    rho: f64,
}

impl ThresholdRule {
    pub fn new(kind: RuleKind, threshold: f64, rho: Option<f64>) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be positive and finite, got {threshold}"
            )));
        }
        let rho = match (kind, rho) {
            (RuleKind::Shiryaev, Some(rho)) if rho > 0.0 && rho < 1.0 => rho,
            (RuleKind::Shiryaev, Some(rho)) => {
                return Err(Error::InvalidParameter(format!(
                    "Shiryaev rule needs rho in (0, 1), got {rho}"
                )))
            }
            (RuleKind::Shiryaev, None) => {
                return Err(Error::InvalidParameter("Shiryaev rule needs rho".into()))
            }
            _ => 0.0,
        };
        Ok(Self { kind, threshold, rho })
    }

    pub fn sr(threshold: f64) -> Result<Self> {
        Self::new(RuleKind::Sr, threshold, None)
    }

    pub fn shiryaev(rho: f64, threshold: f64) -> Result<Self> {
        Self::new(RuleKind::Shiryaev, threshold, Some(rho))
    }

    pub fn cusum(threshold: f64) -> Result<Self> {
        Self::new(RuleKind::Cusum, threshold, None)
    }

    /// Same kind (and rho) with a different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        let rho = (self.kind == RuleKind::Shiryaev).then_some(self.rho);
        Self::new(self.kind, threshold, rho)
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rho(&self) -> Option<f64> {
        (self.kind == RuleKind::Shiryaev).then_some(self.rho)
    }

    /// Posterior-probability threshold `A rho / (1 + A rho)` of a Shiryaev rule.
    pub fn posterior_threshold(&self) -> Option<f64> {
        self.rho().map(|rho| {
            let a = self.threshold * rho;
            a / (1.0 + a)
        })
    }

    pub fn label(&self) -> String {
        match self.kind {
            RuleKind::Shiryaev => format!("shiryaev(rho={},A={})", self.rho, self.threshold),
            kind => format!("{kind}(A={})", self.threshold),
        }
    }

    /// A fresh detector for one run.
    pub fn detector(&self) -> Detector {
        let (stat, bound) = match self.kind {
            RuleKind::Sr if self.threshold > LOG_DOMAIN_THRESHOLD => {
                (Statistic::LogSr(LogSrState::new()), self.threshold.ln())
            }
            RuleKind::Sr => (Statistic::Sr(SrState::new()), self.threshold),
            RuleKind::Shiryaev => (
                Statistic::Shiryaev(ShiryaevState { r_rho: 0.0, rho: self.rho, n: 0 }),
                self.threshold,
            ),
            RuleKind::Cusum => (Statistic::Cusum(CusumState::new()), self.threshold),
        };
        Detector { stat, bound }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    Sr(SrState),
    LogSr(LogSrState),
    Shiryaev(ShiryaevState),
    Cusum(CusumState),
}

/// Running statistic plus alarm bound (in the statistic's own domain).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    stat: Statistic,
    bound: f64,
}

impl Detector {
    /// Feed one observation; returns true on alarm.
    #[inline]
    pub fn observe(&mut self, step: LrStep) -> bool {
        match &mut self.stat {
            Statistic::Sr(s) => {
                *s = s.advance(step.lr);
                s.r >= self.bound
            }
            Statistic::LogSr(s) => {
                *s = s.advance(step.log_lr);
                s.log_r >= self.bound
            }
            Statistic::Shiryaev(s) => {
                *s = s.advance(step.lr);
                s.r_rho >= self.bound
            }
            Statistic::Cusum(s) => {
                *s = s.advance(step.log_lr);
                s.w >= self.bound
            }
        }
    }

    pub fn statistic(&self) -> &Statistic {
        &self.stat
    }

    pub fn steps(&self) -> u64 {
        match &self.stat {
            Statistic::Sr(s) => s.n,
            Statistic::LogSr(s) => s.n,
            Statistic::Shiryaev(s) => s.n,
            Statistic::Cusum(s) => s.n,
        }
    }
}

/// Source of per-observation likelihood ratios, indexed by global time
/// (1-based). Sampling, fixed paths and enumerated oracle paths all plug in
/// through this interface.
pub trait StepSource {
    fn next_step(&mut self, time: u64) -> Option<LrStep>;
}

/// Draws observations from a model, switching to `f1` at the changepoint.
pub struct SampledSource<'a, R: Rng + ?Sized> {
    model: &'a ObservationModel,
    change: ChangeSpec,
    rng: &'a mut R,
}

impl<'a, R: Rng + ?Sized> SampledSource<'a, R> {
    pub fn new(model: &'a ObservationModel, change: ChangeSpec, rng: &'a mut R) -> Self {
        Self { model, change, rng }
    }
}

impl<R: Rng + ?Sized> StepSource for SampledSource<'_, R> {
    #[inline]
    fn next_step(&mut self, time: u64) -> Option<LrStep> {
        let x = self.model.sample(self.rng, self.change.is_post_change(time));
        Some(self.model.step(x))
    }
}

/// A finite, fixed sequence of observations; time `t` reads element `t - 1`.
pub struct PathSource<'a> {
    model: &'a ObservationModel,
    path: &'a [f64],
}

impl<'a> PathSource<'a> {
    pub fn new(model: &'a ObservationModel, path: &'a [f64]) -> Self {
        Self { model, path }
    }
}

impl StepSource for PathSource<'_> {
    fn next_step(&mut self, time: u64) -> Option<LrStep> {
        let x = *self.path.get(usize::try_from(time).ok()?.checked_sub(1)?)?;
        Some(self.model.step(x))
    }
}

/// A fixed sequence of likelihood-ratio steps; time `t` reads element `t - 1`.
pub struct StepSequence(pub Vec<LrStep>);

impl StepSource for StepSequence {
    fn next_step(&mut self, time: u64) -> Option<LrStep> {
        self.0.get(usize::try_from(time).ok()?.checked_sub(1)?).copied()
    }
}

/// The same step forever.
pub struct ConstantSource(pub LrStep);

impl StepSource for ConstantSource {
    fn next_step(&mut self, _time: u64) -> Option<LrStep> {
        Some(self.0)
    }
}

/// Stopping time of one run. `censored` means the run hit the observation
/// cap (or the source ran dry) before an alarm, and `stop` is that cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunOutcome {
    pub stop: u64,
    pub censored: bool,
}

/// Largest number of observations one run may consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    pub n_max: u64,
}

impl RunLimits {
    pub const MULTIPLIER: f64 = 1000.0;
    const CEILING: f64 = 1e10;

    /// `1000 * B` for a rule calibrated to ARL `target`.
    pub fn for_target(target: f64) -> Self {
        Self { n_max: (Self::MULTIPLIER * target.max(1.0)).min(Self::CEILING).ceil() as u64 }
    }

    /// Cap for a fixed-threshold rule, using the rough ARL scale of the
    /// threshold (`A` for SR-type statistics, `e^a` for CUSUM).
    pub fn for_rule(rule: &ThresholdRule) -> Self {
        let scale = match rule.kind() {
            RuleKind::Cusum => rule.threshold().min(30.0).exp(),
            _ => rule.threshold(),
        };
        Self::for_target(scale)
    }
}

/// Run a fresh detector on `source`, reading global times `offset + 1, ...`.
pub fn run_from_source<S: StepSource + ?Sized>(
    rule: &ThresholdRule,
    source: &mut S,
    offset: u64,
    limits: RunLimits,
) -> RunOutcome {
    let mut det = rule.detector();
    for n in 1..=limits.n_max {
        let Some(step) = source.next_step(offset + n) else {
            return RunOutcome { stop: n - 1, censored: true };
        };
        if det.observe(step) {
            return RunOutcome { stop: n, censored: false };
        }
    }
    RunOutcome { stop: limits.n_max, censored: true }
}

/// `N = min{n >= 1 : statistic_n >= threshold}` with the change at `change`.
pub fn run_to_alarm<R: Rng + ?Sized>(
    rule: &ThresholdRule,
    model: &ObservationModel,
    change: ChangeSpec,
    rng: &mut R,
    limits: RunLimits,
) -> RunOutcome {
    run_from_source(rule, &mut SampledSource::new(model, change, rng), 0, limits)
}

/// Alarm time on a fixed list of likelihood ratios, if any.
pub fn run_on_steps(rule: &ThresholdRule, steps: &[LrStep]) -> Option<u64> {
    let mut det = rule.detector();
    steps.iter().position(|&s| det.observe(s)).map(|i| i as u64 + 1)
}

/// Chooses the rule used for each cycle of a repeated application.
pub trait CyclePolicy: Sync {
    /// Returns the cycle type and the rule to run for it.
    fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, ThresholdRule);

    fn n_types(&self) -> usize;
}

impl CyclePolicy for ThresholdRule {
    fn select<R: Rng + ?Sized>(&self, _rng: &mut R) -> (usize, ThresholdRule) {
        (0, *self)
    }

    fn n_types(&self) -> usize {
        1
    }
}

/// Two SR rules; every cycle independently picks either with probability 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureRule {
    components: [ThresholdRule; 2],
}

impl MixtureRule {
    pub fn new(first: ThresholdRule, second: ThresholdRule) -> Result<Self> {
        if first.kind() != RuleKind::Sr || second.kind() != RuleKind::Sr {
            return Err(Error::InvalidParameter("mixture components must be SR rules".into()));
        }
        Ok(Self { components: [first, second] })
    }

    pub fn components(&self) -> &[ThresholdRule; 2] {
        &self.components
    }
}

impl CyclePolicy for MixtureRule {
    fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, ThresholdRule) {
        let pick = usize::from(rng.random_bool(0.5));
        (pick, self.components[pick])
    }

    fn n_types(&self) -> usize {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleLimits {
    /// Observation cap for each cycle.
    pub n_max: u64,
    /// Number of cycles to run when there is no change; a hard stop otherwise.
    pub max_cycles: usize,
}

impl CycleLimits {
    pub fn new(n_max: u64, max_cycles: usize) -> Self {
        Self { n_max, max_cycles }
    }
}

/// Record of a repeated application: cycle lengths, alarm epochs, and the
/// index of the first alarm at or after the changepoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiCyclicTrace {
    #[serde(serialize_with = "serialize_change")]
    pub nu: ChangeSpec,
    pub cycle_lengths: Vec<u64>,
    pub cycle_types: Vec<usize>,
    pub alarm_epochs: Vec<u64>,
    /// 1-based index of the detecting cycle.
    pub j_nu: Option<usize>,
    pub detection_epoch: Option<u64>,
    pub truncated: bool,
}

fn serialize_change<S: serde::Serializer>(c: &ChangeSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&c.to_string())
}

impl MultiCyclicTrace {
    /// `Q_{J_nu} - nu`.
    pub fn delay(&self) -> Option<u64> {
        Some(self.detection_epoch? - self.nu.nu()?)
    }

    /// Age of the running cycle when the change occurs, `nu - Q_{J_nu - 1}`.
    pub fn residual_age(&self) -> Option<u64> {
        let j = self.j_nu?;
        let prev = if j > 1 { self.alarm_epochs[j - 2] } else { 0 };
        Some(self.nu.nu()? - prev)
    }

    /// Type of the cycle whose alarm detects the change.
    pub fn covering_type(&self) -> Option<usize> {
        Some(self.cycle_types[self.j_nu? - 1])
    }

    /// Checks `Q_j = sum_{i<=j} N_i` and the convention `J = min{j : Q_j >= nu}`.
    pub fn check_invariants(&self) -> Result<()> {
        let mut total = 0;
        for (len, &q) in self.cycle_lengths.iter().zip(&self.alarm_epochs) {
            total += len;
            if total != q {
                return Err(Error::Domain(format!("alarm epoch {q} != cumulative length {total}")));
            }
        }
        if let (Some(j), Some(nu)) = (self.j_nu, self.nu.nu()) {
            let q = self.alarm_epochs[j - 1];
            if q < nu || (j > 1 && self.alarm_epochs[j - 2] >= nu) {
                return Err(Error::Domain(format!("J_nu = {j} violates the detection convention")));
            }
        }
        if self.nu == ChangeSpec::Never && self.j_nu.is_some() {
            return Err(Error::Domain("J_nu set without a change".into()));
        }
        Ok(())
    }
}

/// Repeated application of `policy` to the observations from `source`,
/// renewing the statistic from zero after every alarm. `coin` drives the
/// per-cycle rule selection.
pub fn multicyclic_from_source<P, S, R>(
    policy: &P,
    source: &mut S,
    change: ChangeSpec,
    coin: &mut R,
    limits: CycleLimits,
) -> MultiCyclicTrace
where
    P: CyclePolicy + ?Sized,
    S: StepSource + ?Sized,
    R: Rng + ?Sized,
{
    let mut trace = MultiCyclicTrace {
        nu: change,
        cycle_lengths: Vec::new(),
        cycle_types: Vec::new(),
        alarm_epochs: Vec::new(),
        j_nu: None,
        detection_epoch: None,
        truncated: false,
    };
    let mut epoch = 0u64;
    while trace.cycle_lengths.len() < limits.max_cycles {
        let (kind, rule) = policy.select(coin);
        let out = run_from_source(&rule, source, epoch, RunLimits { n_max: limits.n_max });
        if out.censored {
            trace.truncated = true;
            return trace;
        }
        epoch += out.stop;
        trace.cycle_lengths.push(out.stop);
        trace.cycle_types.push(kind);
        trace.alarm_epochs.push(epoch);
        if let Some(nu) = change.nu() {
            if epoch >= nu {
                trace.j_nu = Some(trace.alarm_epochs.len());
                trace.detection_epoch = Some(epoch);
                return trace;
            }
        }
    }
    // Cycle budget exhausted before the change was detected.
    trace.truncated = change != ChangeSpec::Never;
    trace
}

/// Repeated application under the model, change at `change`.
pub fn multicyclic_run<P, R>(
    policy: &P,
    model: &ObservationModel,
    change: ChangeSpec,
    rng: &mut R,
    limits: CycleLimits,
) -> MultiCyclicTrace
where
    P: CyclePolicy + ?Sized,
    R: Rng + ?Sized,
{
    let mut coin = StreamRng::seed_from_u64(rng.random());
    let mut source = SampledSource::new(model, change, rng);
    multicyclic_from_source(policy, &mut source, change, &mut coin, limits)
}
