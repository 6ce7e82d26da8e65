//! Evaluation reports and training history files.

use drmoe_core::data::Dataset;
use drmoe_core::metrics::{confusion, evaluate, prf, render_table, MetricsReport};
use drmoe_core::model::DrMoeModel;
use drmoe_core::train::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::checkpoint::FORMAT_VERSION;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub method: String,
    pub samples: usize,
    pub threshold: Option<f64>,
    pub metrics: MetricsReport,
    pub table: String,
}

impl EvalReport {
    pub fn new(
        method: &str,
        threshold: Option<f64>,
        metrics: MetricsReport,
        digits: usize,
    ) -> Self {
        EvalReport {
            format_version: FORMAT_VERSION,
            method: method.to_string(),
            samples: metrics.counts().total(),
            threshold,
            table: render_table(&[(method, &metrics)], digits),
            metrics,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Metrics of `model` on `data`, AUC from the model's ranking score. AUC is
/// left out when `data` holds a single class.
pub fn evaluate_model(model: &DrMoeModel, data: &Dataset) -> Result<MetricsReport> {
    let preds = model.predict_batch(data.samples())?;
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let truth = data.labels();
    if data.class_counts().contains(&0) {
        return Ok(prf(&confusion(&labels, &truth)?));
    }
    let scores: Vec<f64> = preds.iter().map(|p| model.score(p)).collect();
    Ok(evaluate(&labels, &scores, &truth)?)
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    #[serde(flatten)]
    record: &'a EpochRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<&'a MetricsReport>,
}

/// One JSON object per epoch, with validation metrics when present.
pub fn history_jsonl(history: &[EpochRecord], validation: &[MetricsReport]) -> String {
    let mut out = String::new();
    for (i, record) in history.iter().enumerate() {
        let line = HistoryLine {
            record,
            validation: validation.get(i),
        };
        out.push_str(&serde_json::to_string(&line).expect("history serializes"));
        out.push('\n');
    }
    out
}
