use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histograph::Histograph;

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score statistics fitted on training vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Pools every vertex of every training graph.
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a Histograph>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut graphs_seen = Vec::new();
        for g in graphs {
            let v = g.features().values();
            if sum.is_empty() {
                sum = vec![0.0; v.ncols()];
            } else if sum.len() != v.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "feature width {} differs from {}",
                    v.ncols(),
                    sum.len()
                )));
            }
            for row in v.rows() {
                sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
            }
            count += v.nrows();
            graphs_seen.push(g);
        }
        if graphs_seen.is_empty() || count == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for g in &graphs_seen {
            for row in g.features().values().rows() {
                for ((acc, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *acc += (x - m) * (x - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    /// Z-scores `g`'s features in place with these (training) statistics.
    pub fn apply(&self, g: &mut Histograph) -> Result<()> {
        let f = g.features().f();
        if f != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "graph has {f} features, statistics cover {}",
                self.mean.len()
            )));
        }
        for mut row in g.features_mut().values_mut().rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }
}
