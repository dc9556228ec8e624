//! Quickest change detection with the Shiryaev-Roberts, Shiryaev and CUSUM
//! procedures.
//!
//! The crate is organised bottom-up:
//!
//! * [`models`]: pre/post-change observation models, samplers and an exact
//!   path enumerator for finite-support models.
//! * [`detectors`]: incremental statistics, single-run stopping, repeated
//!   (multi-cyclic) application and the two-threshold mixture rule.
//! * [`calibration`]: Monte Carlo ARL to false alarm and threshold search.
//! * [`metrics`]: integral and conditional detection delays, stationary delay,
//!   residual-time law, Bayesian expected loss and rule comparison.
//! * [`oracle`]: exact computations on enumerated Bernoulli paths.
//! * [`verify`]: the self-check suite behind `quickdetect verify`.
//!
//! Every Monte Carlo routine takes a [`rng::StreamFactory`]; replication `i`
//! always draws from stream `i`, so results do not depend on thread count.

pub mod calibration;
pub mod detectors;
pub mod error;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod verify;

pub use calibration::{calibrate_threshold, estimate_arl2fa, ArlEstimate, Calibrated, CalibrationOptions};
pub use detectors::{
    multicyclic_run, run_to_alarm, CycleLimits, MixtureRule, MultiCyclicTrace, RuleKind,
    RunLimits, RunOutcome, ThresholdRule,
};
pub use error::{Error, Result};
pub use metrics::{Horizon, OperatingCharacteristics};
pub use stats::Estimate;
pub use models::{ChangeSpec, ModelFamily, ObservationModel};
pub use rng::StreamFactory;
