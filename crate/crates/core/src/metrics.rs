//! Confusion counts, per-class precision/recall/F1, Mann-Whitney AUC and the
//! fixed-width results table.
//!
//! The mistake class (label 1) is the positive class. Ratios with a zero
//! denominator are reported as 0.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "predictions and labels",
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let mut c = Confusion::default();
    for (index, (&p, &y)) in preds.iter().zip(labels).enumerate() {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            (p, y) => {
                return Err(Error::InvalidLabel {
                    index,
                    label: if p > 1 { p } else { y },
                })
            }
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
    pub precision_correct: f64,
    pub recall_correct: f64,
    pub precision_mistake: f64,
    pub recall_mistake: f64,
    pub f1_correct: f64,
    pub f1_mistake: f64,
    /// Unweighted mean of the two per-class F1 scores.
    pub f_macro: f64,
    /// Absent when the report was built from counts alone.
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn counts(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }

    pub fn with_auc(mut self, auc: f64) -> Self {
        self.auc = Some(auc);
        self
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.counts().total())
    }
}

/// Derives every ratio in the report from the confusion counts.
pub fn prf(c: &Confusion) -> MetricsReport {
    let precision_mistake = ratio(c.tp, c.tp + c.fp);
    let recall_mistake = ratio(c.tp, c.tp + c.fn_);
    let precision_correct = ratio(c.tn, c.tn + c.fn_);
    let recall_correct = ratio(c.tn, c.tn + c.fp);
    let f1_correct = f1_score(precision_correct, recall_correct);
    let f1_mistake = f1_score(precision_mistake, recall_mistake);
    MetricsReport {
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        precision_correct,
        recall_correct,
        precision_mistake,
        recall_mistake,
        f1_correct,
        f1_mistake,
        f_macro: (f1_correct + f1_mistake) / 2.0,
        auc: None,
    }
}

/// Hard predictions plus mistake scores against ground truth.
pub fn evaluate(preds: &[u8], scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    let report = prf(&confusion(preds, labels)?);
    Ok(report.with_auc(auc_metric(scores, labels)?))
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "scores and labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    crate::math::check_finite("scores", scores)?;
    let mut n = [0usize; 2];
    for (index, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::InvalidLabel { index, label: y });
        }
        n[y as usize] += 1;
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::SingleClass("AUC"));
    }
    Ok((n[1], n[0]))
}

/// Mann-Whitney AUC from average ranks; ties share their rank.
pub fn auc_metric(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks are 1-based: the tie block covers start+1 ..= end
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_block = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count();
        rank_sum_pos += avg_rank * pos_in_block as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Same quantity by enumerating every positive/negative pair.
pub fn auc_metric_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let of_class = |class: u8| {
        scores
            .iter()
            .zip(labels)
            .filter(move |(_, &y)| y == class)
            .map(|(&s, _)| s)
    };
    let mut credit = 0.0;
    for sp in of_class(1) {
        for sn in of_class(0) {
            if sp > sn {
                credit += 1.0;
            } else if sp == sn {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (n_pos as f64 * n_neg as f64))
}

/// Results table with columns F-score, Correct P/R, Mistake P/R, where the
/// F-score column is the macro F1.
pub fn render_table(rows: &[(&str, &MetricsReport)], digits: usize) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain([6])
        .max()
        .unwrap_or(6);
    let w = 9.max(digits + 3);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>w$}  {:^pair$}  {:^pair$}",
        "",
        "",
        "Correct",
        "Mistake",
        pair = 2 * w + 1
    );
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>w$}  {:>w$} {:>w$}  {:>w$} {:>w$}",
        "Method", "F-score", "Precision", "Recall", "Precision", "Recall"
    );
    for (name, r) in rows {
        let cells = [
            r.f_macro,
            r.precision_correct,
            r.recall_correct,
            r.precision_mistake,
            r.recall_mistake,
        ]
        .map(|v| format!("{v:.digits$}"));
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>w$}  {:>w$} {:>w$}  {:>w$} {:>w$}",
            name, cells[0], cells[1], cells[2], cells[3], cells[4]
        );
    }
    out
}
