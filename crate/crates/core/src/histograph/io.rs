//! Versioned JSON container for a single graph.
//!
//! Top level: `version`, `checksum` and `body`. The body holds `n, l, f,
//! layout, coords, source, features` (row-major), `edges` as
//! `(p, q, slice, weight)` with `p < q`, `label` and `provenance`. The
//! checksum is the SHA-256 of the body's exact bytes.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::{AdjacencyTensor, Histograph, Provenance, Segment, VertexFeatureMatrix};
use crate::error::{Error, Result};
use crate::nucleus::{Coord, NucleusSet, NucleusSource};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Body {
    n: usize,
    l: usize,
    f: usize,
    layout: Vec<Segment>,
    coords: Vec<Coord>,
    source: NucleusSource,
    features: Vec<f64>,
    edges: Vec<(usize, usize, usize, f64)>,
    label: Option<usize>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container<'a> {
    version: u32,
    checksum: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

fn checksum(body: &str) -> String {
    Sha256::digest(body.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_json(g: &Histograph) -> Result<String> {
    g.adjacency.check_invariants()?;
    let w = g.adjacency.weights();
    let (n, l, _) = w.dim();
    let mut edges = Vec::new();
    for p in 0..n {
        for q in p + 1..n {
            for s in 0..l {
                let weight = w[[p, s, q]];
                if weight != 0.0 {
                    edges.push((p, q, s, weight));
                }
            }
        }
    }
    if g.features.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite vertex feature".into()));
    }
    let body = Body {
        n,
        l,
        f: g.features.f(),
        layout: g.features.layout().to_vec(),
        coords: g.nuclei.coords().to_vec(),
        source: g.nuclei.source(),
        features: g.features.values().iter().copied().collect(),
        edges,
        label: g.label,
        provenance: g.provenance.clone(),
    };
    let body = serde_json::to_string(&body).expect("body serializes");
    let container = Container {
        version: FORMAT_VERSION,
        checksum: checksum(&body),
        body: &RawValue::from_string(body).expect("valid json"),
    };
    Ok(serde_json::to_string(&container).expect("container serializes"))
}

pub fn from_json(text: &str) -> Result<Histograph> {
    let corrupt = |message: String| Error::Corrupt {
        path: Default::default(),
        message,
    };
    // Version first, so a newer file reports a version error, not a schema error.
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("missing version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let container: Container =
        serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    if checksum(container.body.get()) != container.checksum {
        return Err(Error::ChecksumMismatch);
    }
    let body: Body =
        serde_json::from_str(container.body.get()).map_err(|e| corrupt(e.to_string()))?;
    let Body {
        n,
        l,
        f,
        layout,
        coords,
        source,
        features,
        edges,
        label,
        provenance,
        ..
    } = body;
    if coords.len() != n || features.len() != n * f {
        return Err(Error::ShapeMismatch(format!(
            "header n={n}, f={f} but {} coords and {} feature values",
            coords.len(),
            features.len()
        )));
    }
    let mut weights = Array3::zeros((n, l, n));
    for (p, q, s, w) in edges {
        if p >= q || q >= n || s >= l || !(w > 0.0 && w <= 1.0) {
            return Err(Error::ShapeMismatch(format!("invalid edge ({p},{q},{s},{w})")));
        }
        weights[[p, s, q]] = w;
        weights[[q, s, p]] = w;
    }
    let bounds = coords
        .iter()
        .fold((1, 1), |(w, h), &(x, y)| (w.max(x as usize + 1), h.max(y as usize + 1)));
    let nuclei = NucleusSet::new(coords, source, bounds)?;
    let values = Array2::from_shape_vec((n, f), features).expect("length checked");
    let features = VertexFeatureMatrix::new(values, layout)?;
    Histograph::new(nuclei, AdjacencyTensor::new(weights)?, features, label, provenance)
}

/// Writes the container atomically (temp file + rename).
pub fn serialize(g: &Histograph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json(g)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn deserialize(path: impl AsRef<Path>) -> Result<Histograph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Corrupt { message, .. } => Error::Corrupt {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
