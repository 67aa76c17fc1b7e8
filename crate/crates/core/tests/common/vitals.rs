//! Boundary suite for the healthy ranges: each bound, just inside, just
//! outside. Expected outcomes come from the clinical ranges written out
//! here, not from the library defaults.

use remoni_core::vitals::{check, Direction};
use remoni_core::{Sign, VitalRanges, VitalSample};

use super::Check;

const EPS: f64 = 1e-6;

/// (sign, lower bound, upper bound) of the clinical ranges: 36.5-37.2 °C, 60-100 bpm,
/// 12-20 breaths/min, 90/60 to 120/80 mmHg, SpO2 >= 95 %.
const CLINICAL: [(Sign, f64, Option<f64>); 6] = [
    (Sign::Temp, 36.5, Some(37.2)),
    (Sign::Hr, 60.0, Some(100.0)),
    (Sign::Rr, 12.0, Some(20.0)),
    (Sign::Sys, 90.0, Some(120.0)),
    (Sign::Dia, 60.0, Some(80.0)),
    (Sign::Spo2, 95.0, None),
];

fn nominal() -> VitalSample {
    VitalSample {
        t: 0,
        temp: 36.8,
        hr: 72.0,
        rr: 16.0,
        sys: 110.0,
        dia: 70.0,
        spo2: 98.0,
    }
}

pub struct Case {
    pub name: String,
    pub sample: VitalSample,
    pub expect: Vec<(Sign, Direction)>,
}

pub fn cases() -> Vec<Case> {
    let mut out = vec![Case {
        name: "nominal".into(),
        sample: nominal(),
        expect: vec![],
    }];
    let mut one = |sign: Sign, value: f64, expect: Option<Direction>, label: &str| {
        let mut s = nominal();
        s.set(sign, value);
        out.push(Case {
            name: format!("{} {label} ({value})", sign.as_str()),
            sample: s,
            expect: expect.map(|d| (sign, d)).into_iter().collect(),
        });
    };
    for (sign, lo, hi) in CLINICAL {
        one(sign, lo, None, "at lower bound");
        one(sign, lo + EPS, None, "just above lower bound");
        one(sign, lo - EPS, Some(Direction::Low), "just below lower bound");
        match hi {
            Some(hi) => {
                one(sign, hi, None, "at upper bound");
                one(sign, hi - EPS, None, "just below upper bound");
                one(sign, hi + EPS, Some(Direction::High), "just above upper bound");
            }
            None => one(sign, 100.0, None, "at 100"),
        }
    }
    let mut both = nominal();
    both.sys = 150.0;
    both.dia = 95.0;
    both.hr = 45.0;
    out.push(Case {
        name: "hypertensive and bradycardic".into(),
        sample: both,
        expect: vec![
            (Sign::Hr, Direction::Low),
            (Sign::Sys, Direction::High),
            (Sign::Dia, Direction::High),
        ],
    });
    let mut low = nominal();
    low.temp = 35.0;
    low.spo2 = 88.0;
    out.push(Case {
        name: "hypothermic and hypoxic".into(),
        sample: low,
        expect: vec![(Sign::Temp, Direction::Low), (Sign::Spo2, Direction::Low)],
    });
    out
}

/// Runs every case; returns the per-case failures.
pub fn failures() -> Vec<String> {
    let ranges = VitalRanges::default();
    cases()
        .into_iter()
        .filter_map(|c| {
            let got: Vec<(Sign, Direction)> = check(&c.sample, &ranges).iter().map(|v| (v.sign, v.direction)).collect();
            (got != c.expect).then(|| format!("{}: expected {:?}, got {got:?}", c.name, c.expect))
        })
        .collect()
}

pub fn check_boundaries() -> Check {
    let n = cases().len();
    let bad = failures();
    if bad.is_empty() {
        Ok(format!("{n}/{n} boundary cases"))
    } else {
        Err(format!("{}/{n} failed: {}", bad.len(), bad.join("; ")))
    }
}
