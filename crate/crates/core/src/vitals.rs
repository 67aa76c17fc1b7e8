//! Threshold checks on vital signs and alert deduplication.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Alert, Sign, VitalRanges, VitalSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Low,
    High,
}

/// One sign outside its healthy interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub sign: Sign,
    pub value: f64,
    pub healthy_lo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub healthy_hi: Option<f64>,
    pub direction: Direction,
}

impl Violation {
    /// Distance from the violated bound.
    pub fn excess(&self) -> f64 {
        match self.direction {
            Direction::Low => self.healthy_lo - self.value,
            Direction::High => self.value - self.healthy_hi.unwrap_or(f64::INFINITY),
        }
    }
}

/// Every sign outside its inclusive healthy range, in field order.
pub fn check(v: &VitalSample, ranges: &VitalRanges) -> Vec<Violation> {
    Sign::ALL
        .iter()
        .filter_map(|&sign| {
            let value = v.get(sign);
            let range = ranges.get(sign);
            let direction = if value < range.lo {
                Direction::Low
            } else if range.hi.is_some_and(|hi| value > hi) {
                Direction::High
            } else {
                return None;
            };
            Some(Violation {
                sign,
                value,
                healthy_lo: range.lo,
                healthy_hi: range.hi,
                direction,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardConfig {
    pub ranges: VitalRanges,
    pub cooldown_ms: i64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            ranges: VitalRanges::default(),
            cooldown_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Alerted {
    t: i64,
    excess: f64,
    direction: Direction,
}

/// Stateful alert filter for vital-sign streams.
///
/// A sign alerts on its first violating sample. While it stays out of range,
/// repeats are suppressed for the cooldown unless the excess over the bound
/// has at least doubled since the last alert. Returning in range clears the
/// state.
#[derive(Debug, Default)]
pub struct VitalsGuard {
    config: GuardConfig,
    state: HashMap<(String, Sign), Alerted>,
}

impl VitalsGuard {
    pub fn new(config: GuardConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn config(&self) -> &GuardConfig {
        &self.config
    }

    /// Feeds one sample; returns the alerts it raises, stamped `t_detected`.
    pub fn observe(&mut self, patient_id: &str, v: &VitalSample, t_detected: i64) -> Vec<Alert> {
        let violations = check(v, &self.config.ranges);
        for &sign in Sign::ALL {
            if !violations.iter().any(|x| x.sign == sign) {
                self.state.remove(&(patient_id.to_string(), sign));
            }
        }
        let mut alerts = Vec::new();
        for violation in violations {
            let key = (patient_id.to_string(), violation.sign);
            let excess = violation.excess();
            let fire = match self.state.get(&key) {
                None => true,
                Some(prev) => {
                    prev.direction != violation.direction
                        || v.t - prev.t >= self.config.cooldown_ms
                        || excess >= 2.0 * prev.excess
                }
            };
            if fire {
                self.state.insert(
                    key,
                    Alerted {
                        t: v.t,
                        excess,
                        direction: violation.direction,
                    },
                );
                alerts.push(Alert::vital(patient_id, violation, v.t, t_detected));
            }
        }
        alerts
    }
}

/// Runs a whole time-ordered stream through a fresh guard.
pub fn guard<'a>(
    config: GuardConfig,
    stream: impl IntoIterator<Item = (&'a str, &'a VitalSample)>,
) -> Vec<Alert> {
    let mut g = VitalsGuard::new(config);
    stream
        .into_iter()
        .flat_map(|(p, v)| g.observe(p, v, v.t))
        .collect()
}
