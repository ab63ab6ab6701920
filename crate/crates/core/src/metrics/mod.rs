//! Confusion matrices, per-class metrics, test-set evaluation and
//! aggregation over repeated runs.

use crate::data::ImageSource;
use crate::error::{Error, Result};
use crate::fusion::{threshold_labels, FusionModel};
use crate::train::evaluate_indices;

mod report;

pub use report::{
    bar_chart_svg, confusion_svg, confusion_tsv, parse_cell, render_cell, table_tsv, validate_svg, SvgSummary,
};

/// Counts with diabetic as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Same counts with normal as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

pub fn confusion(truth: &[u8], predicted: &[u8]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "confusion needs equal non-empty label lists, got {} and {}",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            (1, 0) => cm.fn_ += 1,
            _ => return Err(Error::invalid(format!("labels must be 0 or 1, got ({t}, {p})"))),
        }
    }
    Ok(cm)
}

/// Precision, recall and F1 of one class. A zero denominator yields 0 and
/// sets the matching `*_degenerate` flag.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f1_degenerate: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ClassMetrics {
    /// Positive-class metrics of `cm`.
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let (precision, precision_degenerate) = ratio(cm.tp, cm.tp + cm.fp);
        let (recall, recall_degenerate) = ratio(cm.tp, cm.tp + cm.fn_);
        let (f1, f1_degenerate) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Self {
            precision,
            recall,
            f1,
            precision_degenerate,
            recall_degenerate,
            f1_degenerate,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.precision_degenerate || self.recall_degenerate || self.f1_degenerate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub normal: ClassMetrics,
    pub diabetic: ClassMetrics,
    /// Mean BCE over the evaluated samples, when logits were available.
    pub test_loss: Option<f64>,
    pub sample_count: usize,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    Ok(MetricsReport {
        confusion: *cm,
        accuracy: (cm.tp + cm.tn) as f64 / cm.total() as f64,
        normal: ClassMetrics::from_confusion(&cm.swapped()),
        diabetic: ClassMetrics::from_confusion(cm),
        test_loss: None,
        sample_count: cm.total(),
    })
}

/// Eval-mode pass over `indices` of `source`, thresholded at `threshold`.
pub fn evaluate(
    model: &FusionModel<f32>,
    source: &ImageSource,
    indices: &[usize],
    batch_size: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    let pass = evaluate_indices(model, source, indices, batch_size)?;
    let predicted = threshold_labels(&pass.probabilities, threshold)?;
    let mut report = compute_metrics(&confusion(&pass.labels, &predicted)?)?;
    report.test_loss = Some(pass.loss);
    Ok(report)
}

/// Rows of the results table, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    TestLoss,
    Accuracy,
    NormalPrecision,
    NormalRecall,
    NormalF1,
    DiabeticPrecision,
    DiabeticRecall,
    DiabeticF1,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::TestLoss,
        Metric::Accuracy,
        Metric::NormalPrecision,
        Metric::NormalRecall,
        Metric::NormalF1,
        Metric::DiabeticPrecision,
        Metric::DiabeticRecall,
        Metric::DiabeticF1,
    ];

    pub fn value(self, r: &MetricsReport) -> Option<f64> {
        Some(match self {
            Metric::TestLoss => return r.test_loss,
            Metric::Accuracy => r.accuracy,
            Metric::NormalPrecision => r.normal.precision,
            Metric::NormalRecall => r.normal.recall,
            Metric::NormalF1 => r.normal.f1,
            Metric::DiabeticPrecision => r.diabetic.precision,
            Metric::DiabeticRecall => r.diabetic.recall,
            Metric::DiabeticF1 => r.diabetic.f1,
        })
    }

    /// Loss is shown as a raw value, everything else in percent.
    pub fn is_percent(self) -> bool {
        self != Metric::TestLoss
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::TestLoss => "test_loss",
            Metric::Accuracy => "accuracy",
            Metric::NormalPrecision => "normal_precision",
            Metric::NormalRecall => "normal_recall",
            Metric::NormalF1 => "normal_f1",
            Metric::DiabeticPrecision => "diabetic_precision",
            Metric::DiabeticRecall => "diabetic_recall",
            Metric::DiabeticF1 => "diabetic_f1",
        }
    }
}

pub const STD_CONVENTION: &str = "population";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of each metric over `k` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAggregate {
    pub k: usize,
    pub std_convention: &'static str,
    pub stats: Vec<(Metric, MeanStd)>,
}

impl RunAggregate {
    pub fn get(&self, metric: Metric) -> Option<MeanStd> {
        self.stats.iter().find(|(m, _)| *m == metric).map(|(_, s)| *s)
    }
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.max(0.0).sqrt(),
    }
}

/// Aggregates at least two reports; they must agree on whether a test
/// loss is present.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<RunAggregate> {
    if reports.len() < 2 {
        return Err(Error::invalid(format!(
            "aggregation needs at least 2 runs, got {}",
            reports.len()
        )));
    }
    let with_loss = reports[0].test_loss.is_some();
    if reports.iter().any(|r| r.test_loss.is_some() != with_loss) {
        return Err(Error::invalid("reports disagree on whether test loss is present"));
    }
    let stats = Metric::ALL
        .iter()
        .filter_map(|&m| {
            let values: Option<Vec<f64>> = reports.iter().map(|r| m.value(r)).collect();
            values.map(|v| (m, mean_std(&v)))
        })
        .collect();
    Ok(RunAggregate {
        k: reports.len(),
        std_convention: STD_CONVENTION,
        stats,
    })
}
