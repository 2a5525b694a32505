//! Objective-channel source for prediction sessions.
//!
//! A predictor receives the operator's activity over the set that just ended
//! and returns an objective workload estimate in `[0, 1]`. Returning `None`
//! defers to the built-in simulated operator model.

use crate::hpm::WorkloadLevel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorInput {
    pub operator: usize,
    pub set: usize,
    pub views: usize,
    pub mean_views: f64,
    pub abnormal_seen: u32,
    pub abnormal_hits: u32,
    pub normal_hits: u32,
    /// Current objective estimate carried forward by the transition model.
    pub prior_s_obj: f64,
}

pub trait WorkloadPredictor: Send {
    fn predict(&mut self, input: &PredictorInput) -> Option<WorkloadLevel>;
}

/// Stand-in for a sensor-based predictor: load grows with assigned views
/// relative to the team mean and with the share of anomalies missed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedOperatorModel {
    pub kappa: f64,
}

impl SimulatedOperatorModel {
    pub fn estimate(&self, input: &PredictorInput) -> WorkloadLevel {
        let miss = if input.abnormal_seen == 0 {
            0.5
        } else {
            1.0 - f64::from(input.abnormal_hits) / f64::from(input.abnormal_seen)
        };
        WorkloadLevel::clamped(0.3 + 0.4 * miss + self.kappa * (input.views as f64 - input.mean_views))
    }
}

impl WorkloadPredictor for SimulatedOperatorModel {
    fn predict(&mut self, input: &PredictorInput) -> Option<WorkloadLevel> {
        Some(self.estimate(input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(views: usize, seen: u32, hits: u32) -> PredictorInput {
        PredictorInput {
            operator: 0,
            set: 0,
            views,
            mean_views: 3.0,
            abnormal_seen: seen,
            abnormal_hits: hits,
            normal_hits: 0,
            prior_s_obj: 0.5,
        }
    }

    #[test]
    fn neutral_at_equal_split_half_missed() {
        let m = SimulatedOperatorModel { kappa: 0.1 };
        assert!((m.estimate(&input(3, 10, 5)).value() - 0.5).abs() < 1e-12);
        assert!((m.estimate(&input(3, 0, 0)).value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn more_views_and_misses_raise_load() {
        let m = SimulatedOperatorModel { kappa: 0.1 };
        assert!(m.estimate(&input(4, 10, 5)).value() > m.estimate(&input(3, 10, 5)).value());
        assert!(m.estimate(&input(3, 10, 2)).value() > m.estimate(&input(3, 10, 8)).value());
    }
}
