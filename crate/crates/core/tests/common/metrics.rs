//! Recognition metrics on a fixed toy fixture scored by hand.
//!
//! Labels      D D R R W W   (drinking, reading, writing)
//! Predictions D R R R W D
//!
//! | class | tp | predicted | labeled | P   | R   | F1  |
//! |-------|----|-----------|---------|-----|-----|-----|
//! | D     | 1  | 2         | 2       | 1/2 | 1/2 | 1/2 |
//! | R     | 2  | 3         | 2       | 2/3 | 1   | 4/5 |
//! | W     | 1  | 1         | 2       | 1   | 1/2 | 2/3 |
//!
//! accuracy 4/6, macro P 13/18, macro R 2/3, macro F1 59/90. The emotion
//! column mirrors the same confusion over happy/sad/neutral.

use proptest::prelude::*;
use remoni_core::nlp::metrics::{evaluate_recognition, Labeled};
use remoni_core::{Activity, Emotion};

use super::{ensure, runner, Check};

pub const ACCURACY: f64 = 4.0 / 6.0;
pub const MACRO_P: f64 = 13.0 / 18.0;
pub const MACRO_R: f64 = 2.0 / 3.0;
pub const MACRO_F1: f64 = 59.0 / 90.0;

/// Two ulps at 1.0: the hand values are rationals rounded once, the
/// harness sums three rounded ratios.
pub const TOL: f64 = 2.0 * f64::EPSILON;

pub fn fixture() -> (Vec<Labeled>, Vec<Labeled>) {
    use Activity::{Drinking as D, Reading as R, Writing as W};
    use Emotion::{Happy as H, Neutral as N, Sad as S};
    let lab = |activity, emotion| Labeled { activity, emotion };
    let labels = vec![lab(D, H), lab(D, H), lab(R, S), lab(R, S), lab(W, N), lab(W, N)];
    let preds = vec![lab(D, H), lab(R, S), lab(R, S), lab(R, S), lab(W, N), lab(D, H)];
    (preds, labels)
}

pub fn check_fixture() -> Check {
    let (preds, labels) = fixture();
    let m = evaluate_recognition(&preds, &labels).map_err(|e| e.to_string())?;
    for (task, t) in [("activity", m.activity), ("emotion", m.emotion)] {
        let pairs = [
            ("accuracy", t.accuracy, ACCURACY),
            ("macro_precision", t.macro_precision, MACRO_P),
            ("macro_recall", t.macro_recall, MACRO_R),
            ("macro_f1", t.macro_f1, MACRO_F1),
        ];
        for (name, got, want) in pairs {
            if (got - want).abs() > TOL {
                return Err(format!("{task} {name}: {got} vs hand-computed {want}"));
            }
        }
    }
    Ok(format!(
        "acc {ACCURACY:.4}, macro P {MACRO_P:.4}, R {MACRO_R:.4}, F1 {MACRO_F1:.4} on both tasks"
    ))
}

fn labeled() -> impl Strategy<Value = Labeled> {
    (0usize..Activity::ALL.len(), 0usize..Emotion::ALL.len()).prop_map(|(a, e)| Labeled {
        activity: Activity::ALL[a],
        emotion: Emotion::ALL[e],
    })
}

/// Perfect predictions score 1.0 everywhere; shuffling pairs changes nothing.
pub fn check_identity(cases: u32) -> Check {
    let strat = (prop::collection::vec(labeled(), 1..40), prop::collection::vec(labeled(), 1..40), any::<u64>());
    runner(cases)
        .run(&strat, |(xs, other, seed)| {
            let m = evaluate_recognition(&xs, &xs).unwrap();
            for t in [m.activity, m.emotion] {
                ensure(
                    (t.accuracy, t.macro_precision, t.macro_recall, t.macro_f1) == (1.0, 1.0, 1.0, 1.0),
                    || format!("identity gave {t:?}"),
                )?;
            }
            let n = xs.len().min(other.len());
            let (p, l) = (&other[..n], &xs[..n]);
            let base = evaluate_recognition(p, l).unwrap();
            let mut idx: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pp: Vec<_> = idx.iter().map(|&i| p[i]).collect();
            let ll: Vec<_> = idx.iter().map(|&i| l[i]).collect();
            let shuffled = evaluate_recognition(&pp, &ll).unwrap();
            ensure(shuffled == base, || "permutation changed the metrics".into())?;
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} sets: identity = 1.0, permutation invariant"))
}
