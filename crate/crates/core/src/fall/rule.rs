//! Feature-rule fall detector.
//!
//! A fall shows up in the normalized magnitude as a free-fall dip, an impact
//! spike, and then stillness. The rule checks all three around the window's
//! magnitude peak.

use serde::{Deserialize, Serialize};

use super::{DetectorSource, FallScore, DEFAULT_THRESHOLD};
use crate::signal::{Window, TARGET_HZ};

/// Samples inspected before the peak for the free-fall dip (0.5 s).
const PRE_PEAK: usize = (TARGET_HZ / 2) as usize;
/// Samples inspected after the peak for stillness (1.0 s).
const POST_PEAK: usize = TARGET_HZ as usize;
/// Steepness of the margin squashing.
const MARGIN_GAIN: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub peak_mag: f64,
    pub min_mag: f64,
    pub post_peak_var: f64,
    pub max_jerk: f64,
}

/// Thresholds in normalized g (1.0 = 8 g raw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleThresholds {
    pub min_peak: f64,
    pub max_dip: f64,
    pub max_post_var: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        Self {
            min_peak: 0.35,
            max_dip: 0.06,
            max_post_var: 1e-3,
        }
    }
}

/// Magnitude features around the first magnitude maximum.
///
/// `min_mag` covers the 0.5 s up to and including the peak; `post_peak_var`
/// is the population variance over the (up to) 1.0 s after it. When fewer
/// than two samples follow the peak the stillness is unobserved and the
/// variance is reported as infinite.
pub fn featurize(w: &Window) -> FeatureVector {
    let mags = w.magnitudes();
    if mags.is_empty() {
        return FeatureVector {
            peak_mag: 0.0,
            min_mag: 0.0,
            post_peak_var: f64::INFINITY,
            max_jerk: 0.0,
        };
    }
    let (peak_idx, peak_mag) = mags
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, m)| if m > best.1 { (i, m) } else { best });

    let pre = &mags[peak_idx.saturating_sub(PRE_PEAK)..=peak_idx];
    let min_mag = pre.iter().copied().fold(f64::INFINITY, f64::min);

    let post_end = (peak_idx + POST_PEAK).min(mags.len() - 1);
    let post = &mags[peak_idx + 1..=post_end.max(peak_idx)];
    let post_peak_var = if post.len() < 2 {
        f64::INFINITY
    } else {
        let mean = post.iter().sum::<f64>() / post.len() as f64;
        post.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / post.len() as f64
    };

    let max_jerk = w
        .samples
        .windows(2)
        .zip(mags.windows(2))
        .map(|(s, m)| {
            let dt = (s[1].t - s[0].t) as f64 / 1000.0;
            if dt > 0.0 {
                (m[1] - m[0]).abs() / dt
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);

    FeatureVector {
        peak_mag,
        min_mag,
        post_peak_var,
        max_jerk,
    }
}

impl FeatureVector {
    /// Smallest relative margin over the three conditions; non-negative iff
    /// every condition holds.
    pub fn margin(&self, th: &RuleThresholds) -> f64 {
        let peak = (self.peak_mag - th.min_peak) / th.min_peak;
        let dip = (th.max_dip - self.min_mag) / th.max_dip;
        let still = (th.max_post_var - self.post_peak_var) / th.max_post_var;
        peak.min(dip).min(still)
    }

    pub fn is_fall(&self, th: &RuleThresholds) -> bool {
        self.peak_mag >= th.min_peak
            && self.min_mag <= th.max_dip
            && self.post_peak_var <= th.max_post_var
    }
}

pub fn detect_rule(w: &Window) -> FallScore {
    detect_with(w, &RuleThresholds::default())
}

pub fn detect_with(w: &Window, th: &RuleThresholds) -> FallScore {
    let f = featurize(w);
    let fall = f.is_fall(th);
    let margin = f.margin(th);
    let mut probability = if margin.is_finite() {
        1.0 / (1.0 + (-MARGIN_GAIN * margin).exp())
    } else {
        0.0
    };
    // Keep the probability on the correct side of the threshold when the
    // margin is within rounding of zero.
    if fall {
        probability = probability.max(DEFAULT_THRESHOLD);
    } else if probability >= DEFAULT_THRESHOLD {
        probability = f64::from_bits(DEFAULT_THRESHOLD.to_bits() - 1);
    }
    let score = FallScore::new(probability, DEFAULT_THRESHOLD, DetectorSource::RuleBaseline, w.t_start);
    debug_assert_eq!(score.is_fall, fall);
    score
}
