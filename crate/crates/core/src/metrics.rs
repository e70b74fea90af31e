//! Confusion-count metrics and dataset-level reports.
//!
//! Degenerate denominators follow one rule: a ratio whose numerator and
//! denominator are both zero scores 1 when the prediction and target agree
//! perfectly on that class (nothing to find, nothing found), otherwise 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_codec::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts of the background class: positives and negatives swap roles.
    pub fn complement(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion(pred: &BinaryMask, target: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.values().iter().zip(target.values()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSuite {
    pub f1: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f2: f64,
}

fn ratio(num: u64, den: u64, agree: bool) -> f64 {
    if den == 0 {
        if agree {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn metric_suite(c: &ConfusionCounts) -> MetricSuite {
    // Foreground agrees trivially when neither side marks any foreground.
    let fg_agree = c.tp + c.fp + c.fn_ == 0;
    let bg_agree = c.tn + c.fp + c.fn_ == 0;
    MetricSuite {
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, fg_agree),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, fg_agree),
        precision: ratio(c.tp, c.tp + c.fp, fg_agree),
        recall: ratio(c.tp, c.tp + c.fn_, fg_agree),
        specificity: ratio(c.tn, c.tn + c.fp, bg_agree),
        accuracy: ratio(c.tp + c.tn, c.total(), true),
        f2: ratio(5 * c.tp, 5 * c.tp + 4 * c.fn_ + c.fp, fg_agree),
    }
}

/// How per-image results are combined into dataset numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image metrics.
    #[default]
    PerImage,
    /// Metrics of the summed confusion counts.
    Pooled,
}

/// What "mIoU" averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiouMode {
    /// Foreground IoU only.
    #[default]
    Foreground,
    /// Mean of foreground and background IoU.
    TwoClass,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub aggregation: Aggregation,
    pub miou: MiouMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub counts: ConfusionCounts,
    pub metrics: MetricSuite,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean: MetricSuite,
    pub miou: f64,
}

fn miou_of(c: &ConfusionCounts, mode: MiouMode) -> f64 {
    let fg = metric_suite(c).iou;
    match mode {
        MiouMode::Foreground => fg,
        MiouMode::TwoClass => 0.5 * (fg + metric_suite(&c.complement()).iou),
    }
}

/// Scores aligned predictions against targets.
pub fn evaluate_dataset(
    ids: &[String],
    preds: &[BinaryMask],
    targets: &[BinaryMask],
    options: EvalOptions,
) -> Result<DatasetReport> {
    if preds.len() != targets.len() || ids.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} predictions, {} targets",
            ids.len(),
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_image = ids
        .iter()
        .zip(preds.iter().zip(targets))
        .map(|(id, (p, t))| {
            let counts = confusion(p, t)?;
            Ok(ImageMetrics {
                id: id.clone(),
                counts,
                metrics: metric_suite(&counts),
                miou: miou_of(&counts, options.miou),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (mean, miou) = match options.aggregation {
        Aggregation::PerImage => {
            let n = per_image.len() as f64;
            let avg = |f: fn(&MetricSuite) -> f64| per_image.iter().map(|m| f(&m.metrics)).sum::<f64>() / n;
            (
                MetricSuite {
                    f1: avg(|m| m.f1),
                    iou: avg(|m| m.iou),
                    precision: avg(|m| m.precision),
                    recall: avg(|m| m.recall),
                    specificity: avg(|m| m.specificity),
                    accuracy: avg(|m| m.accuracy),
                    f2: avg(|m| m.f2),
                },
                per_image.iter().map(|m| m.miou).sum::<f64>() / n,
            )
        }
        Aggregation::Pooled => {
            let total = per_image
                .iter()
                .fold(ConfusionCounts::default(), |acc, m| acc + m.counts);
            (metric_suite(&total), miou_of(&total, options.miou))
        }
    };
    Ok(DatasetReport { per_image, mean, miou })
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metrics: MetricSuite,
    pub miou: f64,
    /// Trailing columns such as parameter count or throughput, already formatted.
    pub extra: Vec<(String, String)>,
}

impl ReportRow {
    pub fn new(method: impl Into<String>, report: &DatasetReport) -> Self {
        Self {
            method: method.into(),
            metrics: report.mean,
            miou: report.miou,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, column: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra.push((column.into(), value.into()));
        self
    }

    fn cells(&self) -> Vec<String> {
        let m = &self.metrics;
        let mut cells = vec![self.method.clone()];
        for v in [m.f1, self.miou, m.recall, m.precision, m.specificity, m.accuracy, m.f2] {
            cells.push(format!("{v:.4}"));
        }
        cells.extend(self.extra.iter().map(|(_, v)| v.clone()));
        cells
    }
}

pub const REPORT_COLUMNS: [&str; 8] = ["method", "F1", "mIoU", "recall", "precision", "specificity", "accuracy", "F2"];

fn header(rows: &[ReportRow]) -> Vec<String> {
    let mut h: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
    if let Some(first) = rows.first() {
        h.extend(first.extra.iter().map(|(k, _)| k.clone()));
    }
    h
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = header(rows).join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.cells().join(","));
        out.push('\n');
    }
    out
}

pub fn report_markdown(rows: &[ReportRow]) -> String {
    let h = header(rows);
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", h.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(h.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.cells().join(" | "));
    }
    out
}
