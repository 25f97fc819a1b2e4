//! Nucleus graphs: thresholded distance edges, vertex feature matrices and
//! the JSON graph container.

mod features;
mod io;

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nucleus::NucleusSet;

pub use features::{
    assemble_vertex_features, avg_rgb, glcm_features, load_embeddings_csv, CsvEmbeddings,
    EmbeddingProvider, NoEmbeddings, GLCM_LEVELS,
};
pub use io::{deserialize, from_json, serialize, to_json, FORMAT_VERSION};

/// Default neighbour radius in pixels.
pub const DEFAULT_RADIUS: f64 = 100.0;
/// Default side of the nucleus-centred window.
pub const DEFAULT_WINDOW: usize = 71;

/// Dense edge weights indexed `[p, slice, q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyTensor {
    weights: Array3<f64>,
}

impl AdjacencyTensor {
    pub fn new(weights: Array3<f64>) -> Result<Self> {
        let (n, _, n2) = weights.dim();
        if n != n2 {
            return Err(Error::ShapeMismatch(format!(
                "adjacency must be n x l x n, got {:?}",
                weights.dim()
            )));
        }
        Ok(Self { weights })
    }

    pub fn zeros(n: usize, l: usize) -> Self {
        Self {
            weights: Array3::zeros((n, l, n)),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.dim().0
    }

    pub fn l(&self) -> usize {
        self.weights.dim().1
    }

    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    /// Copy of relation slice `l` as an `n x n` matrix.
    pub fn slice(&self, l: usize) -> Array2<f64> {
        self.weights.index_axis(ndarray::Axis(1), l).to_owned()
    }

    /// Number of strictly positive off-diagonal entries in row `p` of slice 0.
    pub fn degree(&self, p: usize) -> usize {
        if self.l() == 0 {
            return 0;
        }
        (0..self.n())
            .filter(|&q| q != p && self.weights[[p, 0, q]] > 0.0)
            .count()
    }

    /// Relabels vertices: new vertex `i` is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let (n, l, _) = self.weights.dim();
        let weights = Array3::from_shape_fn((n, l, n), |(p, s, q)| self.weights[[perm[p], s, perm[q]]]);
        Self { weights }
    }

    /// Symmetric slices, zero diagonal, all weights in `[0, 1]`.
    pub fn check_invariants(&self) -> Result<()> {
        let (n, l, _) = self.weights.dim();
        for s in 0..l {
            for p in 0..n {
                if self.weights[[p, s, p]] != 0.0 {
                    return Err(Error::ShapeMismatch(format!("nonzero diagonal at vertex {p}")));
                }
                for q in 0..n {
                    let w = self.weights[[p, s, q]];
                    if !(0.0..=1.0).contains(&w) {
                        return Err(Error::ShapeMismatch(format!("weight {w} outside [0, 1]")));
                    }
                    if w != self.weights[[q, s, p]] {
                        return Err(Error::ShapeMismatch(format!(
                            "slice {s} not symmetric at ({p},{q})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Single-slice tensor with `w = 1 - d / radius` for `d < radius`.
pub fn build_edges(nuclei: &NucleusSet, radius: f64) -> Result<AdjacencyTensor> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter("radius must be > 0".into()));
    }
    let pts = nuclei.coords();
    let n = pts.len();
    let mut weights = Array3::zeros((n, 1, n));
    for p in 0..n {
        for q in p + 1..n {
            let dx = pts[p].0 as f64 - pts[q].0 as f64;
            let dy = pts[p].1 as f64 - pts[q].1 as f64;
            let d = dx.hypot(dy);
            if d < radius {
                let w = 1.0 - d / radius;
                weights[[p, 0, q]] = w;
                weights[[q, 0, p]] = w;
            }
        }
    }
    Ok(AdjacencyTensor { weights })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Row per vertex, columns described by named contiguous segments.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFeatureMatrix {
    values: Array2<f64>,
    layout: Vec<Segment>,
}

impl VertexFeatureMatrix {
    pub fn new(values: Array2<f64>, layout: Vec<Segment>) -> Result<Self> {
        let mut offset = 0;
        for seg in &layout {
            if seg.offset != offset {
                return Err(Error::ShapeMismatch(format!(
                    "segment {} starts at {}, expected {offset}",
                    seg.name, seg.offset
                )));
            }
            offset += seg.len;
        }
        if offset != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "layout covers {offset} columns, matrix has {}",
                values.ncols()
            )));
        }
        Ok(Self { values, layout })
    }

    /// `[avg_rgb:3][glcm:50][embedding:E][degree:1]`.
    pub fn default_layout(embedding_dim: usize) -> Vec<Segment> {
        let mut layout = Vec::with_capacity(4);
        let mut offset = 0;
        for (name, len) in [
            ("avg_rgb", 3),
            ("glcm", 50),
            ("embedding", embedding_dim),
            ("degree", 1),
        ] {
            layout.push(Segment {
                name: name.into(),
                offset,
                len,
            });
            offset += len;
        }
        layout
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn f(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let values = self.values.select(ndarray::Axis(0), perm);
        Self {
            values,
            layout: self.layout.clone(),
        }
    }
}

/// Source image and effective build parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub params: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }
}

/// One image as a graph: nuclei, edge tensor and vertex features.
#[derive(Debug, Clone, PartialEq)]
pub struct Histograph {
    nuclei: NucleusSet,
    adjacency: AdjacencyTensor,
    features: VertexFeatureMatrix,
    pub label: Option<usize>,
    pub provenance: Provenance,
}

impl Histograph {
    pub fn new(
        nuclei: NucleusSet,
        adjacency: AdjacencyTensor,
        features: VertexFeatureMatrix,
        label: Option<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if nuclei.len() != adjacency.n() || nuclei.len() != features.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} nuclei, adjacency over {}, {} feature rows",
                nuclei.len(),
                adjacency.n(),
                features.n()
            )));
        }
        Ok(Self {
            nuclei,
            adjacency,
            features,
            label,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.nuclei.len()
    }

    pub fn nuclei(&self) -> &NucleusSet {
        &self.nuclei
    }

    pub fn adjacency(&self) -> &AdjacencyTensor {
        &self.adjacency
    }

    pub fn features(&self) -> &VertexFeatureMatrix {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut VertexFeatureMatrix {
        &mut self.features
    }

    /// Same graph with vertices relabeled by `perm` (new `i` = old `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            nuclei: self.nuclei.permuted(perm),
            adjacency: self.adjacency.permuted(perm),
            features: self.features.permuted(perm),
            label: self.label,
            provenance: self.provenance.clone(),
        }
    }
}
