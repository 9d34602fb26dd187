//! Curve metrics (Deletion, Insertion, blurred Insertion, Perturbation) and
//! the scalar AD/IIC/CP/CH/ADCC family.

mod curves;
mod scalar;
mod schedule;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use curves::{
    auc, curve_states, deletion_curve, insertion_blur_curve, insertion_curve, perturbation_curve,
    ProbabilityCurve, DEFAULT_BLUR_SIGMA, DEFAULT_STEPS,
};
pub use scalar::{
    adcc, average_drop, coherency, complexity, explanation_map, increase_in_confidence,
};
pub use schedule::{pixel_schedule, PixelSchedule};

use crate::error::Error;

/// Whether larger scores mean a better attribution map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Expected shape of a good curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMetric {
    Deletion,
    Insertion,
    InsertionBlur,
    Perturbation,
}

impl CurveMetric {
    pub const ALL: [CurveMetric; 4] = [
        Self::Deletion,
        Self::Insertion,
        Self::InsertionBlur,
        Self::Perturbation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Deletion => "deletion",
            Self::Insertion => "insertion",
            Self::InsertionBlur => "insertion_blur",
            Self::Perturbation => "perturbation",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Self::Deletion => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn trend(self) -> Trend {
        match self {
            Self::Deletion => Trend::Decreasing,
            _ => Trend::Increasing,
        }
    }
}

impl fmt::Display for CurveMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub auc: f64,
    pub direction: Direction,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_round_trips() {
        for m in CurveMetric::ALL {
            assert_eq!(m.name().parse::<CurveMetric>().unwrap(), m);
        }
        assert!("sparsity".parse::<CurveMetric>().is_err());
        assert_eq!(CurveMetric::Deletion.direction(), Direction::LowerBetter);
        assert_eq!(CurveMetric::Perturbation.trend(), Trend::Increasing);
    }
}
