//! Window-level fall classification.
//!
//! Two detectors share the [`FallScore`] output: a deterministic rule over
//! magnitude features ([`rule`]) and a Conv1D + LSTM network with a sigmoid
//! head ([`neural`]) driven by a portable JSON weight file.

pub mod neural;
pub mod rule;

use serde::{Deserialize, Serialize};

use crate::signal::Window;

pub use neural::{ModelWeights, WeightsError};
pub use rule::{detect_rule, featurize, FeatureVector, RuleThresholds};

/// Decision threshold on the fall probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSource {
    RuleBaseline,
    NeuralModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallScore {
    pub probability: f64,
    pub is_fall: bool,
    pub threshold: f64,
    pub source: DetectorSource,
    pub window_t_start: i64,
}

impl FallScore {
    pub fn new(probability: f64, threshold: f64, source: DetectorSource, window_t_start: i64) -> Self {
        Self {
            probability,
            is_fall: probability >= threshold,
            threshold,
            source,
            window_t_start,
        }
    }
}

/// Detector selection, configured per edge node.
#[derive(Debug, Clone)]
pub enum Detector {
    Rule(RuleThresholds),
    Model {
        weights: std::sync::Arc<ModelWeights>,
        threshold: f64,
    },
}

impl Default for Detector {
    fn default() -> Self {
        Detector::Rule(RuleThresholds::default())
    }
}

impl Detector {
    pub fn model(weights: ModelWeights) -> Self {
        Detector::Model {
            weights: std::sync::Arc::new(weights),
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn score(&self, w: &Window) -> FallScore {
        match self {
            Detector::Rule(th) => rule::detect_with(w, th),
            Detector::Model { weights, threshold } => weights.infer_with_threshold(w, *threshold),
        }
    }
}

/// Per-window confusion counts with the usual derived rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_rates() {
        let mut c = Confusion::default();
        for (p, a) in [(true, true), (true, true), (true, false), (false, true), (false, false)] {
            c.record(p, a);
        }
        assert_eq!(c.total(), 5);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.accuracy() - 0.6).abs() < 1e-12);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(Confusion::default().recall(), 0.0);
    }

    #[test]
    fn score_threshold_is_inclusive() {
        assert!(FallScore::new(0.5, 0.5, DetectorSource::NeuralModel, 0).is_fall);
        assert!(!FallScore::new(0.4999, 0.5, DetectorSource::NeuralModel, 0).is_fall);
    }
}
