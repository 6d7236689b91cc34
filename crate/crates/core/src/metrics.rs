//! Multiclass evaluation: confusion matrix, one-vs-rest counts, accuracy,
//! precision, recall, F1, and support-weighted/macro averages.
//!
//! Matrix orientation is rows = predicted class, columns = gold class.
//! Precision, recall, and F1 define 0 when their denominator is 0.

use serde::Serialize;

use crate::corpus::LabelVocab;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions and golds differ in length: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("cannot evaluate empty prediction/gold sequences")]
    Empty,
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassOutOfRange { id: u32, num_classes: usize },
    #[error("total count is zero")]
    ZeroTotal,
    #[error("per-class supports are all zero")]
    ZeroSupports,
}

/// C x C count grid; `counts[pred][gold]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// Row-major counts, rows = predicted, columns = gold.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn at(&self, pred: usize, gold: usize) -> u64 {
        self.counts[pred * self.num_classes + gold]
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.at(c, c)).sum()
    }

    /// CSV: header row/column of label names, counts grid.
    pub fn to_csv(&self, labels: &LabelVocab) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["predicted\\gold".to_string()];
        header.extend(labels.names().iter().cloned());
        wtr.write_record(&header).expect("in-memory csv");
        for p in 0..self.num_classes {
            let mut row = vec![labels.name(p).unwrap_or("?").to_string()];
            row.extend((0..self.num_classes).map(|g| self.at(p, g).to_string()));
            wtr.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tpc: u64,
    pub fpc: u64,
    pub tnc: u64,
    pub fnc: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tpc + self.fpc + self.tnc + self.fnc
    }
}

/// Per-class metrics derived from the one-vs-rest counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    /// Gold count of this class in the evaluated sample.
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest accuracy of this class.
    pub accuracy: f64,
}

/// Evaluation bundle: overall accuracy, weighted/macro F1, per-class
/// metrics, and the confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    /// Weighted F1 uses supports counted on the evaluated sample.
    pub support_source: &'static str,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Tally predictions against golds into a C x C matrix.
pub fn confusion_matrix(
    predictions: &[u32],
    golds: &[u32],
    num_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        for id in [p, g] {
            if id as usize >= num_classes {
                return Err(MetricsError::ClassOutOfRange { id, num_classes });
            }
        }
        counts[p as usize * num_classes + g as usize] += 1;
    }
    Ok(ConfusionMatrix {
        num_classes,
        counts,
        total: predictions.len() as u64,
    })
}

/// One-vs-rest counts of class `c`: tp = diagonal, fp = rest of the predicted
/// row, fn = rest of the gold column, tn = everything else.
pub fn class_counts(matrix: &ConfusionMatrix, c: usize) -> Result<ClassCounts, MetricsError> {
    if c >= matrix.num_classes {
        return Err(MetricsError::ClassOutOfRange {
            id: c as u32,
            num_classes: matrix.num_classes,
        });
    }
    let tpc = matrix.at(c, c);
    let row: u64 = (0..matrix.num_classes).map(|g| matrix.at(c, g)).sum();
    let col: u64 = (0..matrix.num_classes).map(|p| matrix.at(p, c)).sum();
    let fpc = row - tpc;
    let fnc = col - tpc;
    let tnc = matrix.total - tpc - fpc - fnc;
    Ok(ClassCounts { tpc, fpc, tnc, fnc })
}

/// (tp + tn) / (tp + tn + fp + fn).
pub fn accuracy(cc: &ClassCounts) -> Result<f64, MetricsError> {
    match cc.total() {
        0 => Err(MetricsError::ZeroTotal),
        total => Ok((cc.tpc + cc.tnc) as f64 / total as f64),
    }
}

/// tp / (tp + fp); 0 when the class was never predicted.
pub fn precision(cc: &ClassCounts) -> f64 {
    match cc.tpc + cc.fpc {
        0 => 0.0,
        den => cc.tpc as f64 / den as f64,
    }
}

/// tp / (tp + fn); 0 when the class is absent from the golds.
pub fn recall(cc: &ClassCounts) -> f64 {
    match cc.tpc + cc.fnc {
        0 => 0.0,
        den => cc.tpc as f64 / den as f64,
    }
}

/// Harmonic mean 2PR / (P + R); 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(per_class: &[ClassMetrics]) -> Result<f64, MetricsError> {
    let support_sum: u64 = per_class.iter().map(|m| m.support).sum();
    if support_sum == 0 {
        return Err(MetricsError::ZeroSupports);
    }
    let weighted: f64 = per_class
        .iter()
        .map(|m| m.support as f64 * m.f1)
        .sum::<f64>();
    Ok(weighted / support_sum as f64)
}

/// Assemble the full report: matrix, per-class metrics, overall accuracy
/// (trace/total), weighted F1, and macro F1.
pub fn evaluate(
    predictions: &[u32],
    golds: &[u32],
    label_vocab: &LabelVocab,
) -> Result<EvalReport, MetricsError> {
    let matrix = confusion_matrix(predictions, golds, label_vocab.len())?;
    let mut per_class = Vec::with_capacity(label_vocab.len());
    for c in 0..label_vocab.len() {
        let cc = class_counts(&matrix, c)?;
        let p = precision(&cc);
        let r = recall(&cc);
        per_class.push(ClassMetrics {
            label: label_vocab.name(c).expect("class id in range").to_string(),
            support: cc.tpc + cc.fnc,
            precision: p,
            recall: r,
            f1: f1(p, r),
            accuracy: accuracy(&cc)?,
        });
    }
    let overall_accuracy = matrix.trace() as f64 / matrix.total as f64;
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    let weighted_f1 = weighted_f1(&per_class)?;
    Ok(EvalReport {
        overall_accuracy,
        weighted_f1,
        macro_f1,
        per_class,
        matrix,
        metadata: ReportMetadata {
            support_source: "evaluated_sample",
        },
    })
}
