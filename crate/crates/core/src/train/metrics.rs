use crate::error::{Error, Result};

/// Classification quality on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub param_count: usize,
}

impl MetricsReport {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], classes: usize, param_count: usize) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        if predicted.is_empty() {
            return Err(Error::contract("no predictions to score"));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&p, &l) in predicted.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::contract(format!("class index outside 0..{classes}")));
            }
            confusion[l][p] += 1;
        }
        Ok(Self::from_confusion(confusion, param_count))
    }

    /// Classes with an empty denominator contribute 0 precision / F1.
    pub fn from_confusion(confusion: Vec<Vec<u64>>, param_count: usize) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..k).map(|c| confusion[c][c]).sum();
        let mut precision_sum = 0.0;
        let mut f1_sum = 0.0;
        for c in 0..k {
            let tp = confusion[c][c];
            let predicted: u64 = (0..k).map(|r| confusion[r][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
            precision_sum += precision;
            if precision + recall > 0.0 {
                f1_sum += 2.0 * precision * recall / (precision + recall);
            }
        }
        MetricsReport {
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            macro_precision: precision_sum / k as f64,
            macro_f1: f1_sum / k as f64,
            confusion,
            param_count,
        }
    }

    /// Test examples per true class.
    pub fn class_totals(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    /// `key=value` lines; the confusion matrix is one row per line.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("accuracy".to_string(), format!("{:.6}", self.accuracy)),
            ("macro_precision".to_string(), format!("{:.6}", self.macro_precision)),
            ("macro_f1".to_string(), format!("{:.6}", self.macro_f1)),
            ("param_count".to_string(), self.param_count.to_string()),
        ];
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            kv.push((format!("confusion_{i}"), cells.join(",")));
        }
        kv
    }
}
