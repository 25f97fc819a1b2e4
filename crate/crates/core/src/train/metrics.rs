use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub loss: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Builds the report from `(true, predicted)` pairs and the summed loss.
    pub fn from_predictions(class_names: Vec<String>, pairs: &[(usize, usize)], loss_sum: f64) -> Self {
        let c = class_names.len();
        let mut confusion = vec![vec![0usize; c]; c];
        for &(t, p) in pairs {
            confusion[t][p] += 1;
        }
        let total = pairs.len();
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = (0..c)
            .map(|j| ratio(confusion[j][j], (0..c).map(|i| confusion[i][j]).sum()))
            .collect();
        let recall = (0..c)
            .map(|i| ratio(confusion[i][i], confusion[i].iter().sum()))
            .collect();
        Self {
            class_names,
            total,
            accuracy: ratio(correct, total),
            confusion,
            precision,
            recall,
            loss: if total == 0 { 0.0 } else { loss_sum / total as f64 },
            provenance: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "graphs    {}", self.total).unwrap();
        writeln!(s, "accuracy  {:.4}", self.accuracy).unwrap();
        writeln!(s, "loss      {:.6}", self.loss).unwrap();
        writeln!(s, "confusion (rows true, columns predicted)").unwrap();
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            writeln!(s, "  {name:<12}{}", cells.join("")).unwrap();
        }
        writeln!(s, "class         precision  recall").unwrap();
        for (i, name) in self.class_names.iter().enumerate() {
            writeln!(s, "  {name:<12}{:>9.4}{:>8.4}", self.precision[i], self.recall[i]).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = MetricsReport::from_predictions(vec!["a".into(), "b".into()], &[(0, 0), (1, 1), (1, 1)], 0.3);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(r.precision, vec![1.0, 1.0]);
        assert!((r.loss - 0.1).abs() < 1e-15);
        assert!(r.to_text().contains("accuracy  1.0000"));
    }

    #[test]
    fn constant_prediction() {
        let r = MetricsReport::from_predictions(vec!["a".into(), "b".into()], &[(0, 0), (1, 0), (0, 0), (1, 0)], 0.0);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.recall, vec![1.0, 0.0]);
        assert_eq!(r.precision, vec![0.5, 0.0]);
        let rows: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![2, 2]);
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
