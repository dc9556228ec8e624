//! Flat TOML experiment configuration.
//!
//! ```toml
//! family = "gaussian"
//! pre = [0.0]
//! post = [1.0]
//! rule = "sr"
//! B = 100
//! n_reps = 10000
//! K = "auto"
//! seed = 42
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use quickdetect::{ChangeSpec, Horizon, ModelFamily, ObservationModel, RuleKind};

use crate::CliError;

/// Changepoint: an observation index or `"inf"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawNu {
    Index(u64),
    Text(String),
}

/// Horizon: a positive integer or `"auto"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawHorizon {
    Fixed(u64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: String,
    pre: Vec<f64>,
    post: Vec<f64>,
    rule: Option<String>,
    rules: Option<Vec<String>>,
    threshold: Option<f64>,
    #[serde(rename = "B")]
    target: Option<f64>,
    rho: Option<f64>,
    c: Option<f64>,
    nu: Option<RawNu>,
    n_reps: Option<usize>,
    #[serde(rename = "K")]
    horizon: Option<RawHorizon>,
    seed: Option<u64>,
    rel_tol: Option<f64>,
    out: Option<PathBuf>,
}

/// How the rule's threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Fixed(f64),
    Target(f64),
}

/// A validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ObservationModel,
    pub rules: Vec<RuleKind>,
    pub threshold: ThresholdSpec,
    pub rho: Option<f64>,
    pub c: Option<f64>,
    pub nu: Option<ChangeSpec>,
    pub n_reps: usize,
    pub horizon: Horizon,
    pub seed: u64,
    pub rel_tol: f64,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_N_REPS: usize = 10_000;
pub const DEFAULT_REL_TOL: f64 = 0.02;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, seed_override)
    }

    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))?;

        let family: ModelFamily = raw.family.parse().map_err(|e| usage(format!("{e}")))?;
        let model = ObservationModel::new(family, &raw.pre, &raw.post).map_err(|e| usage(e.to_string()))?;

        let names = match (raw.rule, raw.rules) {
            (Some(r), None) => vec![r],
            (None, Some(rs)) if !rs.is_empty() => rs,
            (None, Some(_)) => return Err(usage("`rules` must not be empty")),
            (Some(_), Some(_)) => return Err(usage("give either `rule` or `rules`, not both")),
            (None, None) => return Err(usage("missing `rule`")),
        };
        let rules = names
            .iter()
            .map(|n| n.parse::<RuleKind>().map_err(|e| usage(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;

        let threshold = match (raw.threshold, raw.target) {
            (Some(a), None) => ThresholdSpec::Fixed(a),
            (None, Some(b)) => ThresholdSpec::Target(b),
            (Some(_), Some(_)) => return Err(usage("give exactly one of `threshold` and `B`, not both")),
            (None, None) => return Err(usage("give exactly one of `threshold` and `B`")),
        };

        let nu = match raw.nu {
            None => None,
            Some(RawNu::Index(k)) => Some(ChangeSpec::at(k).map_err(|e| usage(e.to_string()))?),
            Some(RawNu::Text(s)) => Some(s.parse::<ChangeSpec>().map_err(|e| usage(e.to_string()))?),
        };
        let horizon = match raw.horizon {
            None => Horizon::Auto,
            Some(RawHorizon::Fixed(0)) => return Err(usage("`K` must be at least 1")),
            Some(RawHorizon::Fixed(k)) => Horizon::Fixed(k),
            Some(RawHorizon::Text(s)) if s == "auto" => Horizon::Auto,
            Some(RawHorizon::Text(s)) => return Err(usage(format!("`K` must be an integer or \"auto\", got {s:?}"))),
        };

        let seed = seed_override
            .or(raw.seed)
            .ok_or_else(|| usage("a seed is required (config `seed` or --seed)"))?;
        let n_reps = raw.n_reps.unwrap_or(DEFAULT_N_REPS);
        if n_reps < 2 {
            return Err(usage("`n_reps` must be at least 2"));
        }
        if let Some(c) = raw.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(usage("`c` must be a nonnegative number"));
            }
        }

        Ok(Self {
            model,
            rules,
            threshold,
            rho: raw.rho,
            c: raw.c,
            nu,
            n_reps,
            horizon,
            seed,
            rel_tol: raw.rel_tol.unwrap_or(DEFAULT_REL_TOL),
            out: raw.out,
        })
    }

    /// The single rule of a one-rule experiment.
    pub fn single_rule(&self) -> Result<RuleKind, CliError> {
        match self.rules.as_slice() {
            [kind] => Ok(*kind),
            _ => Err(usage("this subcommand takes a single `rule`")),
        }
    }
}
