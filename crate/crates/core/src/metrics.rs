//! Confusion-matrix ratios and the empirical ROC curve / AUC.
//!
//! A score at or above the threshold counts as a positive prediction. Tied
//! scores form a single ROC step, and the pair statistic gives ties half
//! credit, so the trapezoidal area and the pair count agree exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts at one decision threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Adds one prediction outcome.
    pub fn record(&mut self, predicted_positive: bool, label: u8) {
        match (predicted_positive, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// (TP + TN) / (TP + TN + FP + FN); `None` when no samples were counted.
pub fn accuracy(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp + c.tn, c.total())
}

/// TP / (TP + FP); `None` when nothing was predicted positive.
pub fn precision(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp)
}

/// TP / (TP + FN); `None` when there are no positive samples.
pub fn sensitivity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::InvalidLabel(f64::from(labels[i])));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore {
            index: i,
            value: scores[i],
        });
    }
    Ok(())
}

/// Counts outcomes with `score >= threshold` predicted positive. Scores must
/// be probabilities in [0, 1].
pub fn confusion_at_threshold(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionCounts> {
    check_lengths(scores, labels)?;
    if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::ScoreRange {
            index: i,
            value: scores[i],
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        counts.record(s >= threshold, l);
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this value are called positive. The first point
    /// uses `+inf`, which calls nothing positive.
    pub threshold: f64,
}

/// ROC curve from (0, 0) to (1, 1), one point per distinct score plus the
/// `+inf` sentinel in front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Builds the empirical ROC curve. Scores may be any finite reals.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc_trapezoid(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Mann-Whitney pair statistic: the fraction of positive/negative pairs in
/// which the positive scores higher, ties counting one half. Quadratic in
/// the sample count; meant as a reference.
pub fn auc_pair_oracle(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut twice_wins = 0u64;
    for &p in &pos {
        for &n in &neg {
            twice_wins += match p.partial_cmp(&n) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice_wins as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// The reported operating-point summary: AUC plus the three ratios at
/// threshold 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub counts: ConfusionCounts,
}

pub const DECISION_THRESHOLD: f64 = 0.5;

impl MetricsReport {
    pub fn from_scores(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let counts = confusion_at_threshold(scores, labels, DECISION_THRESHOLD)?;
        let auc = auc_trapezoid(&roc_points(scores, labels)?);
        Ok(Self {
            auc,
            accuracy: accuracy(&counts),
            precision: precision(&counts),
            sensitivity: sensitivity(&counts),
            counts,
        })
    }

    /// JSON object with keys `auc`, `accuracy`, `precision`, `sensitivity`
    /// and `counts`. Undefined ratios are written as the string
    /// `"undefined"`.
    pub fn to_json(&self) -> serde_json::Value {
        let ratio = |r: Option<f64>| match r {
            Some(v) => serde_json::json!(v),
            None => serde_json::json!("undefined"),
        };
        serde_json::json!({
            "auc": self.auc,
            "accuracy": ratio(self.accuracy),
            "precision": ratio(self.precision),
            "sensitivity": ratio(self.sensitivity),
            "counts": self.counts,
        })
    }
}
