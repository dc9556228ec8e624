//! Operating characteristics of detection rules.
//!
//! Notation: `N` is the stopping time, `E_k` the expectation with the change at
//! observation `k`, `E_inf` with no change.
//!
//! * integral delay `sum_k E_k (N - k)^+`, estimated two ways: by simulating a
//!   change at every `k` ([`integral_add_direct`]) and by a change of measure
//!   that needs pre-change data only ([`integral_add_cm`]),
//!   `sum_k E_k (N - k)^+ = E_inf sum_{n < N} R_n` with `R_n` the SR statistic;
//! * conditional delay `E_k(N - k | N >= k)` and the weights
//!   `w_k = P_inf(N >= k) / E_inf N`;
//! * stationary delay of the repeated rule, directly and as
//!   `sum_k E_k (N - k)^+ / E_inf N`;
//! * residual-time law `lim P(nu - Q_{J-1} = k) = P_inf(N >= k) / E_inf N`;
//! * Bayesian loss `P(N < nu) + c E(N - nu)^+` under a geometric prior.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{null_runs, ArlEstimate, Calibrated, MAX_TRUNCATED_FRACTION};
use crate::detectors::{
    multicyclic_run, run_to_alarm, CycleLimits, CyclePolicy, MixtureRule, RuleKind, RunLimits,
    RunOutcome, SampledSource, StepSource, ThresholdRule,
};
use crate::error::{Error, Result};
use crate::models::{ChangeSpec, ObservationModel};
use crate::rng::StreamFactory;
use crate::stats::{replicate, total_variation};

pub use crate::stats::Estimate;

/// Automatic horizon: smallest `K` with `P_inf(N >= K)` below this.
pub const AUTO_SURVIVAL_CUTOFF: f64 = 1e-4;
/// Conditional delays with fewer surviving runs than this share are "tail".
pub const MIN_ACCEPTANCE: f64 = 1e-3;
/// Changepoint used for stationary estimates, as a multiple of the ARL.
pub const BURN_IN_MULTIPLIER: f64 = 10.0;

const TAG_NULL: u64 = 1;
const TAG_BRANCH: u64 = 2;
const TAG_CM: u64 = 3;
const TAG_STATIONARY: u64 = 4;
const TAG_LOSS: u64 = 5;
const TAG_CONDITIONAL: u64 = 6;

/// Horizon of the sum over changepoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Auto,
    Fixed(u64),
}

/// Changepoint for stationary experiments: `ceil(10 * B)`.
pub fn burn_in_nu(target: f64) -> u64 {
    (BURN_IN_MULTIPLIER * target.max(1.0)).ceil() as u64
}

/// Empirical survival function of the pre-change stopping time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Survival {
    /// `probs[k - 1] = P_inf(N >= k)` for `k = 1 ..= max N`.
    pub probs: Vec<f64>,
    pub n_reps: usize,
    pub truncated: usize,
}

impl Survival {
    pub fn from_runs(runs: &[RunOutcome]) -> Self {
        let max = runs.iter().map(|r| r.stop).max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max + 1];
        for r in runs {
            counts[r.stop as usize] += 1;
        }
        // Suffix sums: #{N >= k}.
        let mut at_least = vec![0u64; max + 1];
        let mut acc = 0;
        for k in (1..=max).rev() {
            acc += counts[k];
            at_least[k] = acc;
        }
        let n = runs.len() as f64;
        Self {
            probs: at_least[1..].iter().map(|&c| c as f64 / n).collect(),
            n_reps: runs.len(),
            truncated: runs.iter().filter(|r| r.censored).count(),
        }
    }

    /// `P_inf(N >= k)`; zero beyond the largest observed run.
    pub fn at(&self, k: u64) -> f64 {
        k.checked_sub(1)
            .and_then(|i| self.probs.get(i as usize))
            .copied()
            .unwrap_or(if k == 0 { 1.0 } else { 0.0 })
    }

    /// Empirical `E_inf N`, i.e. the sum of the survival probabilities.
    pub fn mean(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Smallest `K` with `P_inf(N >= K) < AUTO_SURVIVAL_CUTOFF`.
    pub fn auto_horizon(&self) -> u64 {
        self.probs
            .iter()
            .position(|&p| p < AUTO_SURVIVAL_CUTOFF)
            .map_or(self.probs.len() as u64 + 1, |i| i as u64 + 1)
    }

    /// `sum_{k > horizon} P_inf(N >= k)`.
    pub fn tail_mass(&self, horizon: u64) -> f64 {
        self.probs.iter().skip(horizon as usize).sum()
    }

    /// Residual-time weights `P_inf(N >= k) / E_inf N` for `k = 1..=horizon`.
    pub fn weights(&self, horizon: u64) -> Vec<f64> {
        let mean = self.mean();
        (1..=horizon).map(|k| self.at(k) / mean).collect()
    }

    fn resolve(&self, horizon: Horizon) -> u64 {
        match horizon {
            Horizon::Auto => self.auto_horizon(),
            Horizon::Fixed(k) => k,
        }
    }
}

fn null_survival(
    rule: &ThresholdRule,
    model: &ObservationModel,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> (Vec<RunOutcome>, Survival) {
    let runs = null_runs(rule, model, n_reps, &streams.derive(TAG_NULL), limits);
    let surv = Survival::from_runs(&runs);
    (runs, surv)
}

/// `E_k(N - k | N >= k)` from runs that survive to the change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalAdd {
    pub k: u64,
    pub estimate: Estimate,
    pub accepted: usize,
    pub n_reps: usize,
}

/// Rejection-sampling estimate of `E_k(N - k | N >= k)`: simulate with the
/// change at `k`, discard runs that alarm before it.
pub fn conditional_add(
    rule: &ThresholdRule,
    model: &ObservationModel,
    k: u64,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Result<ConditionalAdd> {
    let change = ChangeSpec::at(k)?;
    let streams = streams.derive(TAG_CONDITIONAL).derive(k);
    let runs = replicate(&streams, n_reps, |rng| {
        run_to_alarm(rule, model, change, rng, RunLimits { n_max: limits.n_max.saturating_add(k) })
    });
    let delays: Vec<f64> = runs.iter().filter(|r| r.stop >= k).map(|r| (r.stop - k) as f64).collect();
    if (delays.len() as f64) < MIN_ACCEPTANCE * n_reps as f64 || delays.is_empty() {
        return Err(Error::KTooLarge { k, accepted: delays.len(), n_reps });
    }
    Ok(ConditionalAdd {
        k,
        estimate: Estimate::from_samples(&delays),
        accepted: delays.len(),
        n_reps,
    })
}

/// Detection delays for every changepoint `k <= horizon`, sharing each
/// replication's pre-change prefix.
///
/// Replication `r` draws one pre-change path (the same path as the null run
/// `r`); for every `k` it survives to, an independent post-change
/// continuation from the detector state at `k - 1` gives one draw of
/// `(N - k)^+` under `P_k`. Each `k` therefore has `n_reps` replications.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub n_reps: usize,
    pub horizon: u64,
    /// Number of replications with `N >= k`.
    pub reached: Vec<u64>,
    delay_sum: Vec<u128>,
    delay_sq: Vec<u128>,
    /// Per-replication totals `T_r = sum_{k <= K} (N_k - k)^+` and stopping
    /// times `N_r`, as exact moment sums.
    total_sum: u128,
    total_sq: u128,
    stop_sum: u128,
    total_stop: u128,
    stop_sq: u128,
    pub censored_branches: u64,
}

#[derive(Clone)]
struct ProfileAcc {
    reached: Vec<u64>,
    delay_sum: Vec<u128>,
    delay_sq: Vec<u128>,
    total_sum: u128,
    total_sq: u128,
    stop_sum: u128,
    total_stop: u128,
    stop_sq: u128,
    censored: u64,
}

impl ProfileAcc {
    fn new(horizon: usize) -> Self {
        Self {
            reached: vec![0; horizon],
            delay_sum: vec![0; horizon],
            delay_sq: vec![0; horizon],
            total_sum: 0,
            total_sq: 0,
            stop_sum: 0,
            total_stop: 0,
            stop_sq: 0,
            censored: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for i in 0..self.reached.len() {
            self.reached[i] += other.reached[i];
            self.delay_sum[i] += other.delay_sum[i];
            self.delay_sq[i] += other.delay_sq[i];
        }
        self.total_sum += other.total_sum;
        self.total_sq += other.total_sq;
        self.stop_sum += other.stop_sum;
        self.total_stop += other.total_stop;
        self.stop_sq += other.stop_sq;
        self.censored += other.censored;
        self
    }
}

pub fn delay_profile(
    rule: &ThresholdRule,
    model: &ObservationModel,
    horizon: u64,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> DelayProfile {
    let prefix_streams = streams.derive(TAG_NULL);
    let branch_streams = streams.derive(TAG_BRANCH);
    let k_max = horizon as usize;
    let acc = (0..n_reps as u64)
        .into_par_iter()
        .fold(
            || ProfileAcc::new(k_max),
            |mut acc, r| {
                let mut pre = prefix_streams.stream(r);
                let mut post = branch_streams.stream(r);
                let mut det = rule.detector();
                let mut total = 0u128;
                let mut stop = limits.n_max;
                for n in 1..=limits.n_max {
                    if n <= horizon {
                        // Branch: change at k = n, detector has seen n - 1 pre-change observations.
                        let i = (n - 1) as usize;
                        acc.reached[i] += 1;
                        let mut branch = det;
                        let mut delay = 0u64;
                        loop {
                            let x = model.sample(&mut post, true);
                            if branch.observe(model.step(x)) {
                                break;
                            }
                            delay += 1;
                            if delay >= limits.n_max {
                                acc.censored += 1;
                                break;
                            }
                        }
                        let d = delay as u128;
                        acc.delay_sum[i] += d;
                        acc.delay_sq[i] += d * d;
                        total += d;
                    }
                    let x = model.sample(&mut pre, false);
                    if det.observe(model.step(x)) {
                        stop = n;
                        break;
                    }
                }
                let stop = stop as u128;
                acc.total_sum += total;
                acc.total_sq += total * total;
                acc.stop_sum += stop;
                acc.stop_sq += stop * stop;
                acc.total_stop += total * stop;
                acc
            },
        )
        .reduce(|| ProfileAcc::new(k_max), ProfileAcc::merge);
    DelayProfile {
        n_reps,
        horizon,
        reached: acc.reached,
        delay_sum: acc.delay_sum,
        delay_sq: acc.delay_sq,
        total_sum: acc.total_sum,
        total_sq: acc.total_sq,
        stop_sum: acc.stop_sum,
        total_stop: acc.total_stop,
        stop_sq: acc.stop_sq,
        censored_branches: acc.censored,
    }
}

impl DelayProfile {
    /// `E_k (N - k)^+` (unconditioned).
    pub fn unconditional(&self, k: u64) -> Estimate {
        let i = (k - 1) as usize;
        // Runs with N < k contribute zeros.
        Estimate::from_moments(self.n_reps as u64, self.delay_sum[i], self.delay_sq[i])
    }

    /// `E_k(N - k | N >= k)`, or `None` when fewer than
    /// `MIN_ACCEPTANCE * n_reps` runs reached `k`.
    pub fn conditional(&self, k: u64) -> Option<Estimate> {
        let i = (k - 1) as usize;
        let reached = self.reached[i];
        if reached == 0 || (reached as f64) < MIN_ACCEPTANCE * self.n_reps as f64 {
            return None;
        }
        Some(Estimate::from_moments(reached, self.delay_sum[i], self.delay_sq[i]))
    }

    /// `sum_{k <= K} E_k (N - k)^+`.
    pub fn integral(&self) -> Estimate {
        Estimate::from_moments(self.n_reps as u64, self.total_sum, self.total_sq)
    }

    /// `E_inf N` over the shared prefixes.
    pub fn arl(&self) -> Estimate {
        Estimate::from_moments(self.n_reps as u64, self.stop_sum, self.stop_sq)
    }

    /// `sum_{k <= K} E_k (N - k)^+ / E_inf N` with the correlation between the
    /// numerator and the denominator accounted for.
    pub fn stationary_ratio(&self) -> Estimate {
        let n = self.n_reps as f64;
        let my = self.total_sum as f64 / n;
        let mx = self.stop_sum as f64 / n;
        let r = my / mx;
        // sum (y - r x)^2 = Syy - 2 r Sxy + r^2 Sxx
        let ss = self.total_sq as f64 - 2.0 * r * self.total_stop as f64 + r * r * self.stop_sq as f64;
        let var = (ss / (n - 1.0)).max(0.0);
        Estimate::new(r, (var / n).sqrt() / mx)
    }

    /// Largest non-tail conditional delay over `k <= K`.
    pub fn sup_conditional(&self) -> Option<Estimate> {
        (1..=self.horizon)
            .filter_map(|k| self.conditional(k))
            .max_by(|a, b| a.value.total_cmp(&b.value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralAdd {
    pub estimate: Estimate,
    pub horizon: u64,
    /// Bound on the omitted terms `k > K`.
    pub tail_bound: f64,
    /// `P_inf(N >= K)` at the chosen horizon.
    pub survival_at_horizon: f64,
    pub censored_branches: u64,
}

/// `sum_k E_k (N - k)^+` by simulating the change at every `k <= K`.
///
/// The omitted tail is bounded by `c_tail * sum_{k > K} P_inf(N >= k)`, with
/// `c_tail` the largest observed conditional delay.
pub fn integral_add_direct(
    rule: &ThresholdRule,
    model: &ObservationModel,
    horizon: Horizon,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Result<IntegralAdd> {
    let (_, surv) = null_survival(rule, model, n_reps, streams, limits);
    let (_, integral) = integral_with_profile(rule, model, &surv, horizon, n_reps, streams, limits)?;
    Ok(integral)
}

fn integral_with_profile(
    rule: &ThresholdRule,
    model: &ObservationModel,
    surv: &Survival,
    horizon: Horizon,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Result<(DelayProfile, IntegralAdd)> {
    let k = surv.resolve(horizon);
    if k == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let profile = delay_profile(rule, model, k, n_reps, streams, limits);
    let c_tail = profile.sup_conditional().map_or(0.0, |e| e.value);
    let integral = IntegralAdd {
        estimate: profile.integral(),
        horizon: k,
        tail_bound: c_tail * surv.tail_mass(k),
        survival_at_horizon: surv.at(k),
        censored_branches: profile.censored_branches,
    };
    Ok((profile, integral))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CmEstimate {
    pub estimate: Estimate,
    pub truncated: usize,
}

/// Per-run ingredients of the change-of-measure estimators, from one
/// pre-change path.
struct NullPathSums {
    stop: u64,
    censored: bool,
    /// `sum_{n < N} R_n`.
    sr_sum: f64,
    /// For each prior `rho`: `(1 - rho)^N` and `sum_{n < N} R~_n`, where
    /// `R~_n = sum_{k <= n} rho (1 - rho)^{k-1} prod_{i=k}^n L_i`.
    weighted: Vec<(f64, f64)>,
}

fn null_path_sums<R: Rng + ?Sized>(
    rule: &ThresholdRule,
    model: &ObservationModel,
    rhos: &[f64],
    rng: &mut R,
    limits: RunLimits,
) -> NullPathSums {
    let mut det = rule.detector();
    let mut source = SampledSource::new(model, ChangeSpec::Never, rng);
    let mut r = 0.0;
    let mut sr_sum = 0.0;
    // (prior mass of the next k, running R~, running sum)
    let mut tilde: Vec<(f64, f64, f64)> = rhos.iter().map(|&rho| (rho, 0.0, 0.0)).collect();
    for n in 1..=limits.n_max {
        let step = source.next_step(n).expect("sampled sources never run dry");
        let alarm = det.observe(step);
        r = (1.0 + r) * step.lr;
        for (t, &rho) in tilde.iter_mut().zip(rhos) {
            t.1 = (t.1 + t.0) * step.lr;
            t.0 *= 1.0 - rho;
        }
        if alarm {
            let weighted = tilde.iter().zip(rhos).map(|(t, &rho)| ((1.0 - rho).powf(n as f64), t.2)).collect();
            return NullPathSums { stop: n, censored: false, sr_sum, weighted };
        }
        sr_sum += r;
        for t in tilde.iter_mut() {
            t.2 += t.1;
        }
    }
    let n = limits.n_max;
    let weighted = tilde.iter().zip(rhos).map(|(t, &rho)| ((1.0 - rho).powf(n as f64), t.2)).collect();
    NullPathSums { stop: n, censored: true, sr_sum, weighted }
}

/// `sum_k E_k (N - k)^+` as `E_inf sum_{n < N} R_n`, from pre-change runs only.
/// `R_n` is always the model's SR statistic, whatever rule is being run.
pub fn integral_add_cm(
    rule: &ThresholdRule,
    model: &ObservationModel,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> CmEstimate {
    let runs = replicate(&streams.derive(TAG_CM), n_reps, |rng| {
        null_path_sums(rule, model, &[], rng, limits)
    });
    let sums: Vec<f64> = runs.iter().map(|r| r.sr_sum).collect();
    CmEstimate {
        estimate: Estimate::from_samples(&sums),
        truncated: runs.iter().filter(|r| r.censored).count(),
    }
}

/// `w_k = P_inf(N >= k) / E_inf N` for `k = 1..=K`.
pub fn weights(
    rule: &ThresholdRule,
    model: &ObservationModel,
    horizon: Horizon,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Vec<f64> {
    let (_, surv) = null_survival(rule, model, n_reps, streams, limits);
    surv.weights(surv.resolve(horizon))
}

/// Largest `E_k(N - k | N >= k)` over `k <= K`, tail points excluded.
pub fn sup_conditional_add(
    rule: &ThresholdRule,
    model: &ObservationModel,
    horizon: Horizon,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Result<Estimate> {
    let (_, surv) = null_survival(rule, model, n_reps, streams, limits);
    let k = surv.resolve(horizon);
    delay_profile(rule, model, k, n_reps, streams, limits)
        .sup_conditional()
        .ok_or(Error::KTooLarge { k: 1, accepted: 0, n_reps })
}

/// Delays, cycle ages and covering-cycle types from repeated runs with the
/// change at `nu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySample {
    pub nu: u64,
    pub delays: Vec<u64>,
    pub ages: Vec<u64>,
    pub covering_types: Vec<usize>,
    pub truncated: usize,
}

impl StationarySample {
    pub fn mean_delay(&self) -> Estimate {
        let d: Vec<f64> = self.delays.iter().map(|&d| d as f64).collect();
        Estimate::from_samples(&d)
    }

    /// Empirical mass of the cycle age `nu - Q_{J-1}` at `k = 1, 2, ...`.
    pub fn residual_masses(&self) -> Vec<f64> {
        let max = self.ages.iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max];
        for &a in &self.ages {
            counts[a as usize - 1] += 1;
        }
        let n = self.ages.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Share of detecting cycles of the given type.
    pub fn covering_fraction(&self, kind: usize) -> Estimate {
        let hits: Vec<f64> = self.covering_types.iter().map(|&t| f64::from(u8::from(t == kind))).collect();
        Estimate::from_samples(&hits)
    }
}

pub fn stationary_sample<P: CyclePolicy + ?Sized>(
    policy: &P,
    model: &ObservationModel,
    nu: u64,
    n_reps: usize,
    streams: &StreamFactory,
    n_max: u64,
) -> Result<StationarySample> {
    let change = ChangeSpec::at(nu)?;
    let limits = CycleLimits::new(n_max, usize::try_from(nu).unwrap_or(usize::MAX).saturating_add(1));
    let traces = replicate(&streams.derive(TAG_STATIONARY).derive(nu), n_reps, |rng| {
        let t = multicyclic_run(policy, model, change, rng, limits);
        (t.delay(), t.residual_age(), t.covering_type())
    });
    let mut sample = StationarySample { nu, delays: vec![], ages: vec![], covering_types: vec![], truncated: 0 };
    for t in traces {
        match t {
            (Some(d), Some(a), Some(kind)) => {
                sample.delays.push(d);
                sample.ages.push(a);
                sample.covering_types.push(kind);
            }
            _ => sample.truncated += 1,
        }
    }
    if sample.delays.is_empty() {
        return Err(Error::Domain("every multi-cyclic run was truncated".into()));
    }
    Ok(sample)
}

/// Mean of `Q_{J_nu} - nu` over repeated runs with the change at `nu`.
pub fn stationary_add_direct<P: CyclePolicy + ?Sized>(
    policy: &P,
    model: &ObservationModel,
    nu: u64,
    n_reps: usize,
    streams: &StreamFactory,
    n_max: u64,
) -> Result<Estimate> {
    Ok(stationary_sample(policy, model, nu, n_reps, streams, n_max)?.mean_delay())
}

/// `sum_k E_k (N - k)^+ / E_inf N`.
pub fn stationary_add_formula(oc: &OperatingCharacteristics) -> f64 {
    oc.integral_add.estimate.value / oc.arl2fa.mean
}

/// Empirical law of the cycle age `nu - Q_{J_nu - 1}` (index 0 is age 1).
pub fn residual_time_dist<P: CyclePolicy + ?Sized>(
    policy: &P,
    model: &ObservationModel,
    nu: u64,
    n_reps: usize,
    streams: &StreamFactory,
    n_max: u64,
) -> Result<Vec<f64>> {
    Ok(stationary_sample(policy, model, nu, n_reps, streams, n_max)?.residual_masses())
}

/// Geometric prior `P(nu = k) = rho (1 - rho)^{k-1}`, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometricPrior {
    rho: f64,
}

impl GeometricPrior {
    pub fn new(rho: f64) -> Result<Self> {
        if rho > 0.0 && rho < 1.0 {
            Ok(Self { rho })
        } else {
            Err(Error::InvalidParameter(format!("prior rho must lie in (0, 1), got {rho}")))
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mass(&self, k: u64) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.rho * (1.0 - self.rho).powf((k - 1) as f64)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        // Number of failures before the first success, plus one.
        Geometric::new(self.rho).expect("rho validated").sample(rng) + 1
    }
}

/// Loss 1 for a false alarm and `c` per observation of delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSpec {
    c: f64,
    prior: GeometricPrior,
}

impl LossSpec {
    pub fn new(c: f64, prior: GeometricPrior) -> Result<Self> {
        if c >= 0.0 && c.is_finite() {
            Ok(Self { c, prior })
        } else {
            Err(Error::InvalidParameter(format!("delay cost must be nonnegative, got {c}")))
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn prior(&self) -> GeometricPrior {
        self.prior
    }
}

/// `P(N < nu) + c E(N - nu)^+` with `nu` drawn from the prior in every
/// replication.
pub fn expected_loss(
    rule: &ThresholdRule,
    model: &ObservationModel,
    loss: &LossSpec,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Estimate {
    let losses = replicate(&streams.derive(TAG_LOSS), n_reps, |rng| {
        let nu = loss.prior.sample(rng);
        let out = run_to_alarm(rule, model, ChangeSpec::At(nu), rng, RunLimits {
            n_max: limits.n_max.saturating_add(nu),
        });
        if out.stop < nu {
            1.0
        } else {
            loss.c * (out.stop - nu) as f64
        }
    });
    Estimate::from_samples(&losses)
}

/// Same loss with the changepoint integrated out analytically on each
/// pre-change path:
/// `P(N < nu) = E_inf (1 - rho)^N`, `E(N - nu)^+ = E_inf sum_{n < N} R~_n`.
pub fn expected_loss_cm(
    rule: &ThresholdRule,
    model: &ObservationModel,
    loss: &LossSpec,
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Estimate {
    let rho = loss.prior.rho;
    let losses = replicate(&streams.derive(TAG_CM), n_reps, |rng| {
        let s = null_path_sums(rule, model, &[rho], rng, limits);
        let (surv, delay) = s.weighted[0];
        surv + loss.c * delay
    });
    Estimate::from_samples(&losses)
}

/// Distance between the scaled Bayes gain `(1 - phi) / rho` and its
/// `rho -> 0` limit `E_inf N - c sum_k E_k (N - k)^+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesGap {
    pub rho: f64,
    pub scaled_gain: Estimate,
    pub limit: Estimate,
    pub gap: Estimate,
}

/// Evaluates [`BayesGap`] for each prior on common pre-change paths.
pub fn bayes_limit_gaps(
    rule: &ThresholdRule,
    model: &ObservationModel,
    c: f64,
    rhos: &[f64],
    n_reps: usize,
    streams: &StreamFactory,
    limits: RunLimits,
) -> Result<Vec<BayesGap>> {
    for &rho in rhos {
        GeometricPrior::new(rho)?;
    }
    let runs = replicate(&streams.derive(TAG_CM), n_reps, |rng| null_path_sums(rule, model, rhos, rng, limits));
    let limit_samples: Vec<f64> = runs.iter().map(|r| r.stop as f64 - c * r.sr_sum).collect();
    let limit = Estimate::from_samples(&limit_samples);
    Ok(rhos
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let gains: Vec<f64> = runs
                .iter()
                .map(|r| {
                    let (surv, delay) = r.weighted[i];
                    (1.0 - surv - c * delay) / rho
                })
                .collect();
            let diffs: Vec<f64> = gains.iter().zip(&limit_samples).map(|(g, l)| g - l).collect();
            BayesGap {
                rho,
                scaled_gain: Estimate::from_samples(&gains),
                limit,
                gap: Estimate::from_samples(&diffs),
            }
        })
        .collect())
}

/// Outcome of running the randomized two-threshold rule repeatedly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureReport {
    pub arl: [ArlEstimate; 2],
    /// Stationary delay of each component run on its own.
    pub component_add: [Estimate; 2],
    /// Stationary delay of the mixture.
    pub mixture_add: Estimate,
    /// `B1/(B1+B2) ADD(B1) + B2/(B1+B2) ADD(B2)`.
    pub convex_prediction: Estimate,
    pub z_add: f64,
    /// Observed share of detecting cycles of the first type.
    pub covering_first: Estimate,
    /// `B1 / (B1 + B2)`.
    pub predicted_covering_first: f64,
    pub z_covering: f64,
}

/// Stationary delay of the mixture rule versus the length-weighted
/// combination of its components.
pub fn mixture_add_experiment(
    rule_1: &ThresholdRule,
    rule_2: &ThresholdRule,
    model: &ObservationModel,
    nu: u64,
    n_reps: usize,
    streams: &StreamFactory,
    n_max: u64,
) -> Result<MixtureReport> {
    let mixture = MixtureRule::new(*rule_1, *rule_2)?;
    let limits = RunLimits { n_max };
    let arl = [
        crate::calibration::estimate_arl2fa(rule_1, model, n_reps, &streams.derive(11), limits)?,
        crate::calibration::estimate_arl2fa(rule_2, model, n_reps, &streams.derive(12), limits)?,
    ];
    let component_add = [
        stationary_add_direct(rule_1, model, nu, n_reps, &streams.derive(21), n_max)?,
        stationary_add_direct(rule_2, model, nu, n_reps, &streams.derive(22), n_max)?,
    ];
    let mix = stationary_sample(&mixture, model, nu, n_reps, &streams.derive(23), n_max)?;
    let mixture_add = mix.mean_delay();

    let (b1, b2) = (arl[0].mean, arl[1].mean);
    let w = b1 / (b1 + b2);
    // d w / d b1 = b2 / (b1 + b2)^2, d w / d b2 = -b1 / (b1 + b2)^2
    let w_se = (b2 * arl[0].std_err).hypot(b1 * arl[1].std_err) / (b1 + b2).powi(2);
    let spread = component_add[0].value - component_add[1].value;
    let convex_prediction = Estimate::new(
        w * component_add[0].value + (1.0 - w) * component_add[1].value,
        (w * component_add[0].std_err)
            .hypot((1.0 - w) * component_add[1].std_err)
            .hypot(spread * w_se),
    );
    let covering_first = mix.covering_fraction(0);
    let predicted = Estimate::new(w, w_se);
    Ok(MixtureReport {
        arl,
        component_add,
        mixture_add,
        convex_prediction,
        z_add: mixture_add.z_against(&convex_prediction),
        covering_first,
        predicted_covering_first: w,
        z_covering: covering_first.z_against(&predicted),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub kind: RuleKind,
    pub threshold: f64,
    pub arl: ArlEstimate,
    pub integral_add: Estimate,
    pub stationary_add: Estimate,
    pub horizon: u64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub target: f64,
    pub rows: Vec<ComparisonRow>,
    /// Rules that beat the first SR rule by more than 3 combined standard
    /// errors. SR is optimal for both criteria, so any entry here signals a
    /// defect.
    pub violations: Vec<String>,
}

/// Integral and stationary delays of rules calibrated to the same ARL.
pub fn compare_rules(
    rules: &[Calibrated],
    model: &ObservationModel,
    target: f64,
    rel_tol: f64,
    horizon: Horizon,
    n_reps: usize,
    streams: &StreamFactory,
) -> Result<ComparisonReport> {
    if rules.len() < 2 {
        return Err(Error::ComparisonRefused("need at least two rules".into()));
    }
    for c in rules {
        if !c.within_tolerance(target, rel_tol) || c.arl.truncated_fraction > MAX_TRUNCATED_FRACTION {
            return Err(Error::ComparisonRefused(format!(
                "{} has ARL {:.4}, outside {target} ± {:.1}%",
                c.rule.label(),
                c.arl.mean,
                100.0 * rel_tol
            )));
        }
    }
    let limits = RunLimits::for_target(target);
    let rows = rules
        .iter()
        .map(|c| {
            let (_, surv) = null_survival(&c.rule, model, n_reps, streams, limits);
            let (profile, integral) =
                integral_with_profile(&c.rule, model, &surv, horizon, n_reps, streams, limits)?;
            Ok(ComparisonRow {
                label: c.rule.label(),
                kind: c.rule.kind(),
                threshold: c.rule.threshold(),
                arl: c.arl,
                integral_add: integral.estimate,
                stationary_add: profile.stationary_ratio(),
                horizon: integral.horizon,
                tail_bound: integral.tail_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut violations = Vec::new();
    if let Some(sr) = rows.iter().find(|r| r.kind == RuleKind::Sr) {
        for row in rows.iter().filter(|r| !std::ptr::eq(*r, sr)) {
            for (metric, a, b) in [
                ("integral_add", &row.integral_add, &sr.integral_add),
                ("stationary_add", &row.stationary_add, &sr.stationary_add),
            ] {
                if a.value < b.value - 3.0 * a.combined_std_err(b) {
                    violations.push(format!(
                        "{} beats {} on {metric}: {a} vs {b}",
                        row.label, sr.label
                    ));
                }
            }
        }
    }
    Ok(ComparisonReport { target, rows, violations })
}

/// Every operating characteristic of one rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingCharacteristics {
    pub rule: ThresholdRule,
    pub arl2fa: ArlEstimate,
    pub integral_add: IntegralAdd,
    pub integral_add_cm: CmEstimate,
    /// `E_k(N - k | N >= k)` for `k = 1..=K`; `None` marks tail points.
    pub conditional_add: Vec<Option<Estimate>>,
    /// `E_k (N - k)^+` for `k = 1..=K`.
    pub unconditional_add: Vec<Estimate>,
    pub weights: Vec<f64>,
    pub survival: Vec<f64>,
    pub sup_conditional_add: Option<Estimate>,
    pub stationary_add: Estimate,
    pub stationary_add_formula: Estimate,
    pub nu: u64,
    pub residual_time: Vec<f64>,
    /// Total-variation distance between `residual_time` and `weights`.
    pub residual_tv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcOptions {
    pub horizon: Horizon,
    pub n_reps: usize,
    /// Changepoint for the stationary estimates; `None` uses `10 * ARL`.
    pub nu: Option<u64>,
    pub limits: RunLimits,
}

pub fn operating_characteristics(
    rule: &ThresholdRule,
    model: &ObservationModel,
    opts: &OcOptions,
    streams: &StreamFactory,
) -> Result<OperatingCharacteristics> {
    let (runs, surv) = null_survival(rule, model, opts.n_reps, streams, opts.limits);
    let arl2fa = ArlEstimate::from_runs(&runs);
    if arl2fa.truncated_fraction > MAX_TRUNCATED_FRACTION {
        return Err(Error::CalibrationUnreliable {
            truncated_fraction: arl2fa.truncated_fraction,
            n_max: opts.limits.n_max,
        });
    }
    let (profile, integral) =
        integral_with_profile(rule, model, &surv, opts.horizon, opts.n_reps, streams, opts.limits)?;
    let k = integral.horizon;
    let nu = opts.nu.unwrap_or_else(|| burn_in_nu(arl2fa.mean));
    let stationary = stationary_sample(rule, model, nu, opts.n_reps, streams, opts.limits.n_max)?;
    let weights = surv.weights(k);
    let residual_time = stationary.residual_masses();
    Ok(OperatingCharacteristics {
        rule: *rule,
        arl2fa,
        integral_add: integral,
        integral_add_cm: integral_add_cm(rule, model, opts.n_reps, streams, opts.limits),
        conditional_add: (1..=k).map(|k| profile.conditional(k)).collect(),
        unconditional_add: (1..=k).map(|k| profile.unconditional(k)).collect(),
        residual_tv: total_variation(&residual_time, &surv.weights(surv.probs.len() as u64)),
        weights,
        survival: surv.probs.iter().take(k as usize).copied().collect(),
        sup_conditional_add: profile.sup_conditional(),
        stationary_add: stationary.mean_delay(),
        stationary_add_formula: profile.stationary_ratio(),
        nu,
        residual_time,
    })
}
