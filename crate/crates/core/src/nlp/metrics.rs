//! Recognition scoring: accuracy and macro precision/recall/F1 per task.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Activity, Emotion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognitionMetrics {
    pub activity: TaskMetrics,
    pub emotion: TaskMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{predictions} predictions but {labels} labels")]
pub struct LengthMismatch {
    pub predictions: usize,
    pub labels: usize,
}

/// Exact-match scoring over one task. Macro averages run over the classes
/// present in `labels`; a class never predicted has precision 0, and F1 is
/// averaged per class.
pub fn score_task<T: Ord + Hash + Copy>(predictions: &[T], labels: &[T]) -> Result<TaskMetrics, LengthMismatch> {
    if predictions.len() != labels.len() {
        return Err(LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let n = labels.len();
    if n == 0 {
        return Ok(TaskMetrics {
            n,
            accuracy: 0.0,
            macro_precision: 0.0,
            macro_recall: 0.0,
            macro_f1: 0.0,
        });
    }
    let mut tp: BTreeMap<T, usize> = BTreeMap::new();
    let mut pred_count: BTreeMap<T, usize> = BTreeMap::new();
    let mut label_count: BTreeMap<T, usize> = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        *pred_count.entry(p).or_default() += 1;
        *label_count.entry(l).or_default() += 1;
        if p == l {
            *tp.entry(l).or_default() += 1;
        }
    }
    let classes: BTreeSet<T> = label_count.keys().copied().collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in &classes {
        let t = tp.get(c).copied().unwrap_or(0);
        let p = ratio(t, pred_count.get(c).copied().unwrap_or(0));
        let r = ratio(t, label_count[c]);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = classes.len() as f64;
    Ok(TaskMetrics {
        n,
        accuracy: ratio(tp.values().sum(), n),
        macro_precision: p_sum / k,
        macro_recall: r_sum / k,
        macro_f1: f_sum / k,
    })
}

/// Paired activity/emotion prediction or label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeled {
    pub activity: Activity,
    pub emotion: Emotion,
}

pub fn evaluate_recognition(predictions: &[Labeled], labels: &[Labeled]) -> Result<RecognitionMetrics, LengthMismatch> {
    let pa: Vec<_> = predictions.iter().map(|x| x.activity).collect();
    let la: Vec<_> = labels.iter().map(|x| x.activity).collect();
    let pe: Vec<_> = predictions.iter().map(|x| x.emotion).collect();
    let le: Vec<_> = labels.iter().map(|x| x.emotion).collect();
    Ok(RecognitionMetrics {
        activity: score_task(&pa, &la)?,
        emotion: score_task(&pe, &le)?,
    })
}
