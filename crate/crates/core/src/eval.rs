//! Label parsing, scoring and the aggregate statistics of a run.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::plugin::PluginPrediction;
use crate::schema::TaskSchema;

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyRecords,
    #[error("Matthews correlation needs exactly two labels, task has {0}")]
    NotBinaryTask(usize),
    #[error("record {0:?} has no plug-in prediction")]
    MissingPluginPrediction(String),
    #[error("bin width {0} does not split (0, 1] into a whole number of bins")]
    BadBinWidth(f64),
    #[error("variance needs at least two values, got {0}")]
    TooFewValues(usize),
}

/// Exact-match parse of a completion.
///
/// Takes the first line, trims surrounding whitespace, strips one optional
/// leading `Label:` and requires byte-exact membership in `labels`.
pub fn parse_label<'a>(completion: &str, labels: &'a [String]) -> Option<&'a str> {
    let first = completion.split('\n').next().unwrap_or("");
    let mut candidate = first.trim();
    if let Some(rest) = candidate.strip_prefix("Label:") {
        candidate = rest.trim();
    }
    labels
        .iter()
        .find(|l| l.as_str() == candidate)
        .map(String::as_str)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: String,
    pub plugin_pred: Option<PluginPrediction>,
    /// `None` when the completion could not be parsed.
    pub final_label: Option<String>,
    pub raw_completion: String,
    pub overridden: bool,
    pub explanation: Option<String>,
}

impl PredictionRecord {
    pub fn new(
        id: impl Into<String>,
        gold: impl Into<String>,
        plugin_pred: Option<PluginPrediction>,
        final_label: Option<String>,
        raw_completion: impl Into<String>,
    ) -> Self {
        let overridden = match (&plugin_pred, &final_label) {
            (Some(p), Some(f)) => p.label != *f,
            _ => false,
        };
        Self {
            id: id.into(),
            gold: gold.into(),
            plugin_pred,
            final_label,
            raw_completion: raw_completion.into(),
            overridden,
            explanation: None,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.final_label.as_deref() == Some(self.gold.as_str())
    }

    /// Whether the stored fields satisfy the override and explanation invariants.
    pub fn is_consistent(&self) -> bool {
        let expected = match (&self.plugin_pred, &self.final_label) {
            (Some(p), Some(f)) => p.label != *f,
            _ => false,
        };
        self.overridden == expected && (self.explanation.is_none() || self.overridden)
    }
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Binary Matthews correlation with `labels[0]` as the positive class.
///
/// An unparseable final label counts as a prediction of the class opposite
/// to gold. A zero denominator yields 0.0.
pub fn matthews_corr(records: &[PredictionRecord], labels: &[String]) -> Result<f64, EvalError> {
    if labels.len() != 2 {
        return Err(EvalError::NotBinaryTask(labels.len()));
    }
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let positive = labels[0].as_str();
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        let gold_pos = r.gold == positive;
        let pred_pos = match r.final_label.as_deref() {
            Some(l) => l == positive,
            None => !gold_pos,
        };
        match (gold_pos, pred_pos) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
    }
    Ok(mcc_from_counts(tp, tn, fp, fn_))
}

pub fn mcc_from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / libm::sqrt(denom)
}

/// Share of overridden records, and accuracy over the overridden subset.
pub fn override_stats(records: &[PredictionRecord]) -> Result<(f64, Option<f64>), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    if let Some(r) = records.iter().find(|r| r.plugin_pred.is_none()) {
        return Err(EvalError::MissingPluginPrediction(r.id.clone()));
    }
    Ok(override_counts(records))
}

fn override_counts(records: &[PredictionRecord]) -> (f64, Option<f64>) {
    let overridden: Vec<&PredictionRecord> = records.iter().filter(|r| r.overridden).collect();
    let pct = overridden.len() as f64 / records.len() as f64;
    let acc = (!overridden.is_empty()).then(|| {
        overridden.iter().filter(|r| r.is_correct()).count() as f64 / overridden.len() as f64
    });
    (pct, acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count_all: u64,
    pub count_overridden: u64,
}

fn bin_count(bin_width: f64) -> Result<usize, EvalError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(EvalError::BadBinWidth(bin_width));
    }
    let n = libm::round(1.0 / bin_width);
    if libm::fabs(n * bin_width - 1.0) > 1e-9 {
        return Err(EvalError::BadBinWidth(bin_width));
    }
    Ok(n as usize)
}

/// Bin index of a confidence; bins are `[lower, lower + width)` and the last one includes 1.0.
pub fn bin_index(confidence: f64, bin_width: f64, bins: usize) -> usize {
    let i = libm::floor(confidence / bin_width + 1e-9);
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(bins - 1)
    }
}

/// Plug-in confidence histogram over all records and over overridden ones.
pub fn confidence_histogram(
    records: &[PredictionRecord],
    bin_width: f64,
) -> Result<Vec<HistogramBin>, EvalError> {
    let bins = bin_count(bin_width)?;
    let mut hist: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lower: i as f64 / bins as f64,
            count_all: 0,
            count_overridden: 0,
        })
        .collect();
    for r in records {
        let pred = r
            .plugin_pred
            .as_ref()
            .ok_or_else(|| EvalError::MissingPluginPrediction(r.id.clone()))?;
        let bin = &mut hist[bin_index(pred.confidence, bin_width, bins)];
        bin.count_all += 1;
        if r.overridden {
            bin.count_overridden += 1;
        }
    }
    Ok(hist)
}

/// Sample variance (n - 1 denominator).
pub fn variance_across_seeds(values: &[f64]) -> Result<f64, EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFewValues(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub mcc: Option<f64>,
    pub pct_overridden: f64,
    pub overridden_accuracy: Option<f64>,
    pub histogram: Vec<HistogramBin>,
    pub records: Vec<PredictionRecord>,
}

impl EvalReport {
    /// Aggregates records. MCC is reported for binary tasks; the histogram
    /// covers records that carry a plug-in prediction.
    pub fn from_records(
        records: Vec<PredictionRecord>,
        schema: &TaskSchema,
        bin_width: f64,
    ) -> Result<Self, EvalError> {
        let accuracy = accuracy(&records)?;
        let mcc = if schema.labels.len() == 2 {
            Some(matthews_corr(&records, &schema.labels)?)
        } else {
            None
        };
        let (pct_overridden, overridden_accuracy) = override_counts(&records);
        let with_pred: Vec<PredictionRecord> = records
            .iter()
            .filter(|r| r.plugin_pred.is_some())
            .cloned()
            .collect();
        let histogram = confidence_histogram(&with_pred, bin_width)?;
        Ok(Self {
            n: records.len(),
            accuracy,
            mcc,
            pct_overridden,
            overridden_accuracy,
            histogram,
            records,
        })
    }
}
