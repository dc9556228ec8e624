//! Shared fixtures for the criterion benchmarks.

use quickdetect::{ObservationModel, ThresholdRule};

pub fn gaussian_unit_shift() -> ObservationModel {
    ObservationModel::gaussian(1.0).expect("valid model")
}

pub fn toy_bernoulli() -> ObservationModel {
    ObservationModel::bernoulli(0.5, 0.75).expect("valid model")
}

/// Rules with roughly comparable false-alarm rates on the unit-shift model.
pub fn comparable_rules() -> Vec<(&'static str, ThresholdRule)> {
    vec![
        ("sr", ThresholdRule::sr(80.0).expect("valid rule")),
        ("cusum", ThresholdRule::cusum(3.5).expect("valid rule")),
        ("shiryaev", ThresholdRule::shiryaev(1e-3, 80.0).expect("valid rule")),
    ]
}
