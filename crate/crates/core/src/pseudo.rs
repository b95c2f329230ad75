//! Ensemble averaging and pseudo labels.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

fn check_rows(m: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::data(format!("{what}: row {i} is not a probability vector (sum {sum})")));
        }
    }
    Ok(())
}

/// Elementwise mean of probability matrices of identical shape.
pub fn ensemble_average(prob_matrices: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = prob_matrices.first().ok_or_else(|| Error::contract("ensemble of zero members"))?;
    let mut sum = Array2::<f64>::zeros(first.dim());
    for (k, m) in prob_matrices.iter().enumerate() {
        if m.dim() != first.dim() {
            return Err(Error::dimension(format!("member {k} has shape {:?}, expected {:?}", m.dim(), first.dim())));
        }
        check_rows(m, &format!("member {k}"))?;
        sum += m;
    }
    Ok(sum / prob_matrices.len() as f64)
}

/// Hard labels for the unlabeled target, with the ensemble distribution they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub round_index: usize,
    pub hard_labels: Vec<usize>,
    pub confidences: Vec<f64>,
    /// Rows whose confidence fell below the threshold; trainers skip them.
    pub excluded: Vec<bool>,
    pub avg_probs: Array2<f64>,
}

/// Argmax (ties to the lowest class) with confidence thresholding.
pub fn to_pseudo_labels(avg_probs: &Array2<f64>, threshold: f64, round_index: usize) -> Result<PseudoLabelSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("pseudo threshold must be in [0, 1], got {threshold}")));
    }
    check_rows(avg_probs, "averaged predictions")?;
    let mut hard_labels = Vec::with_capacity(avg_probs.nrows());
    let mut confidences = Vec::with_capacity(avg_probs.nrows());
    for row in avg_probs.rows() {
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        hard_labels.push(best);
        confidences.push(row[best]);
    }
    let excluded = confidences.iter().map(|&c| c < threshold).collect();
    Ok(PseudoLabelSet { round_index, hard_labels, confidences, excluded, avg_probs: avg_probs.clone() })
}

/// Fraction of samples whose hard label differs between two sets.
pub fn pseudo_label_shift(a: &PseudoLabelSet, b: &PseudoLabelSet) -> Result<f64> {
    if a.hard_labels.len() != b.hard_labels.len() {
        return Err(Error::dimension(format!(
            "pseudo label sets cover {} and {} samples",
            a.hard_labels.len(),
            b.hard_labels.len()
        )));
    }
    if a.hard_labels.is_empty() {
        return Ok(0.0);
    }
    let differing = a.hard_labels.iter().zip(&b.hard_labels).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.hard_labels.len() as f64)
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.hard_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_labels.is_empty()
    }

    /// `(row, label)` for every row that is not excluded.
    pub fn included(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.hard_labels.iter().enumerate().filter(|(i, _)| !self.excluded[*i]).map(|(i, &l)| (i, l))
    }

    /// Set built from given labels with full confidence, e.g. to inject
    /// externally produced (possibly noisy) pseudo labels.
    pub fn from_hard_labels(labels: &[usize], class_count: usize, round_index: usize) -> Result<Self> {
        let mut avg = Array2::zeros((labels.len(), class_count));
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::data(format!("label {l} outside {class_count} classes")));
            }
            avg[[i, l]] = 1.0;
        }
        to_pseudo_labels(&avg, 0.0, round_index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let set: PseudoLabelSet = serde_json::from_slice(&fs::read(path)?)?;
        let n = set.hard_labels.len();
        if set.confidences.len() != n || set.excluded.len() != n || set.avg_probs.nrows() != n {
            return Err(Error::data("pseudo label snapshot fields disagree on length"));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn average_examples() {
        let m = array![[0.2, 0.8], [0.6, 0.4]];
        let avg = ensemble_average(&[m.clone(), m.clone(), m.clone()]).unwrap();
        assert!(avg.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        let avg = ensemble_average(&[array![[1.0, 0.0]], array![[0.0, 1.0]]]).unwrap();
        assert_eq!(avg, array![[0.5, 0.5]]);
        assert!(matches!(ensemble_average(&[]), Err(Error::Contract(_))));
        assert!(matches!(ensemble_average(&[m.clone(), array![[1.0, 0.0]]]), Err(Error::Dimension(_))));
        assert!(ensemble_average(&[array![[0.7, 0.7]]]).is_err());
    }

    #[test]
    fn argmax_threshold_and_ties() {
        let s = to_pseudo_labels(&array![[0.2, 0.5, 0.3]], 0.0, 0).unwrap();
        assert_eq!((s.hard_labels[0], s.confidences[0]), (1, 0.5));
        let s = to_pseudo_labels(&array![[0.5, 0.5]], 0.0, 0).unwrap();
        assert_eq!(s.hard_labels, vec![0]);
        assert_eq!(s.excluded, vec![false]);
        let s = to_pseudo_labels(&array![[0.9, 0.1], [0.55, 0.45]], 0.6, 3).unwrap();
        assert_eq!(s.hard_labels, vec![0, 0]);
        assert_eq!(s.excluded, vec![false, true]);
        assert_eq!(s.included().collect::<Vec<_>>(), vec![(0, 0)]);
        assert_eq!(s.round_index, 3);
    }

    #[test]
    fn shift_counts() {
        let mk = |l: &[usize]| PseudoLabelSet::from_hard_labels(l, 3, 0).unwrap();
        assert_eq!(pseudo_label_shift(&mk(&[0, 1, 2]), &mk(&[0, 1, 2])).unwrap(), 0.0);
        assert_eq!(pseudo_label_shift(&mk(&[0, 1]), &mk(&[1, 0])).unwrap(), 1.0);
        assert_eq!(pseudo_label_shift(&mk(&[0, 1, 2, 2]), &mk(&[0, 1, 2, 1])).unwrap(), 0.25);
        assert!(pseudo_label_shift(&mk(&[0]), &mk(&[0, 1])).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let s = to_pseudo_labels(&array![[0.9, 0.1], [1.0 / 3.0, 2.0 / 3.0]], 0.5, 2).unwrap();
        s.save(&path).unwrap();
        assert_eq!(PseudoLabelSet::load(&path).unwrap(), s);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"round_index\":2") && text.contains("hard_labels") && text.contains("confidences"));
    }
}
