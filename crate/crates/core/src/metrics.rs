//! Overall accuracy (`mean_acc_all`) and mean per-class recall (`mean_acc_classes`).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_acc_all: f64,
    /// Mean recall over classes that occur in the truth; absent classes are skipped.
    pub mean_acc_classes: f64,
    /// `None` for classes with no true samples.
    pub per_class_acc: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(pred_labels: &[usize], true_labels: &[usize], class_count: usize) -> Result<EvalResult> {
    if pred_labels.is_empty() {
        return Err(Error::contract("evaluate on zero samples"));
    }
    if pred_labels.len() != true_labels.len() {
        return Err(Error::dimension(format!("{} predictions for {} truths", pred_labels.len(), true_labels.len())));
    }
    let mut confusion = vec![vec![0u64; class_count]; class_count];
    for (&p, &t) in pred_labels.iter().zip(true_labels) {
        if p >= class_count || t >= class_count {
            return Err(Error::contract(format!("label outside {class_count} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..class_count).map(|c| confusion[c][c]).sum();
    let per_class_acc: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_acc.iter().flatten().copied().collect();
    Ok(EvalResult {
        mean_acc_all: correct as f64 / pred_labels.len() as f64,
        mean_acc_classes: present.iter().sum::<f64>() / present.len() as f64,
        per_class_acc,
        confusion,
    })
}

/// Row-wise argmax of a probability matrix, ties to the lowest class.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Accuracy of `probs`' argmax against `truth`.
pub fn accuracy(probs: &Array2<f64>, truth: &[usize]) -> Result<f64> {
    Ok(evaluate(&argmax_rows(probs), truth, probs.ncols())?.mean_acc_all)
}

impl EvalResult {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Plain-text summary with the per-class table.
    pub fn summary(&self) -> String {
        let mut out = format!("mean_acc_all {:.4}\nmean_acc_classes {:.4}\n", self.mean_acc_all, self.mean_acc_classes);
        for (c, acc) in self.per_class_acc.iter().enumerate() {
            let support: u64 = self.confusion[c].iter().sum();
            match acc {
                Some(a) => out.push_str(&format!("  class {c:>3}  acc {a:.4}  support {support}\n")),
                None => out.push_str(&format!("  class {c:>3}  (absent, excluded)\n")),
            }
        }
        out
    }
}
