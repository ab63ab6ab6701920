//! Metrics recomputed by expanding a confusion matrix into label pairs.

use retina_fusion::metrics::ConfusionMatrix;

pub fn expand(cm: &ConfusionMatrix) -> (Vec<u8>, Vec<u8>) {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (n, t, p) in [(cm.tp, 1, 1), (cm.tn, 0, 0), (cm.fp, 0, 1), (cm.fn_, 1, 0)] {
        truth.extend(std::iter::repeat(t).take(n));
        pred.extend(std::iter::repeat(p).take(n));
    }
    (truth, pred)
}

/// Precision, recall and F1 of class `c` by counting label pairs.
pub fn class_scores(truth: &[u8], pred: &[u8], c: u8) -> (f64, f64, f64) {
    let hits = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count();
    let predicted = pred.iter().filter(|&&p| p == c).count();
    let actual = truth.iter().filter(|&&t| t == c).count();
    let precision = if predicted == 0 { 0.0 } else { hits as f64 / predicted as f64 };
    let recall = if actual == 0 { 0.0 } else { hits as f64 / actual as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

pub fn accuracy(truth: &[u8], pred: &[u8]) -> f64 {
    truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}
