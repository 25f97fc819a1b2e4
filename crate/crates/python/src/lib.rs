//! Python module `histograph`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use histograph_core as core;
use histograph_core::gcn::{load_checkpoint, model_forward, Checkpoint};
use histograph_core::histograph::{EmbeddingProvider, NoEmbeddings};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::FileNotFound(_) | core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A nucleus graph: coordinates, weighted adjacency and vertex features.
#[pyclass(name = "Histograph", module = "histograph")]
struct PyHistograph {
    inner: core::histograph::Histograph,
}

#[pymethods]
impl PyHistograph {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = core::histograph::deserialize(&path).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core::histograph::serialize(&self.inner, &path).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        core::histograph::to_json(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = core::histograph::from_json(text).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn f(&self) -> usize {
        self.inner.features().f()
    }

    #[getter]
    fn l(&self) -> usize {
        self.inner.adjacency().l()
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.inner.label
    }

    #[setter]
    fn set_label(&mut self, label: Option<usize>) {
        self.inner.label = label;
    }

    #[getter]
    fn coords(&self) -> Vec<(u32, u32)> {
        self.inner.nuclei().coords().to_vec()
    }

    /// Row-major vertex features, one list per vertex.
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner
            .features()
            .values()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    /// `(name, offset, length)` of each feature segment.
    fn layout(&self) -> Vec<(String, usize, usize)> {
        self.inner
            .features()
            .layout()
            .iter()
            .map(|s| (s.name.clone(), s.offset, s.len))
            .collect()
    }

    /// Undirected edges `(p, q, slice, weight)` with `p < q`.
    fn edges(&self) -> Vec<(usize, usize, usize, f64)> {
        let w = self.inner.adjacency().weights();
        let (n, l, _) = w.dim();
        let mut out = Vec::new();
        for p in 0..n {
            for q in p + 1..n {
                for s in 0..l {
                    if w[[p, s, q]] != 0.0 {
                        out.push((p, q, s, w[[p, s, q]]));
                    }
                }
            }
        }
        out
    }

    fn provenance(&self) -> BTreeMap<String, String> {
        let mut m = self.inner.provenance.params.clone();
        m.insert("source".into(), self.inner.provenance.source.clone());
        m
    }

    /// Copy whose vertex `i` is this graph's vertex `perm[i]`.
    fn permuted(&self, perm: Vec<usize>) -> PyResult<Self> {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..self.inner.n()).collect::<Vec<_>>() {
            return Err(PyValueError::new_err("not a permutation of the vertices"));
        }
        Ok(Self {
            inner: self.inner.permuted(&perm),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Histograph(n={}, f={}, l={}, label={:?})",
            self.inner.n(),
            self.inner.features().f(),
            self.inner.adjacency().l(),
            self.inner.label
        )
    }
}

/// A trained classifier loaded from a checkpoint.
#[pyclass(name = "Model", module = "histograph")]
struct PyModel {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ckpt: load_checkpoint(&path).map_err(err)?,
        })
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.ckpt.class_names.clone()
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.ckpt.params.input_width()
    }

    fn parameter_count(&self) -> usize {
        self.ckpt.params.parameter_count()
    }

    /// Class logits after applying the checkpoint's standardization.
    fn forward(&self, graph: &PyHistograph) -> PyResult<Vec<f64>> {
        let mut g = graph.inner.clone();
        if let Some(s) = &self.ckpt.stats {
            s.apply(&mut g).map_err(err)?;
        }
        model_forward(&g, &self.ckpt.params).map_err(err)
    }

    fn predict(&self, graph: &PyHistograph) -> PyResult<usize> {
        Ok(core::gcn::argmax(&self.forward(graph)?))
    }
}

/// Weighted edges `(p, q, weight)` between points closer than `radius`.
#[pyfunction]
#[pyo3(signature = (coords, width, height, radius = core::histograph::DEFAULT_RADIUS))]
fn build_edges(coords: Vec<(u32, u32)>, width: usize, height: usize, radius: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let nuclei = core::nucleus::NucleusSet::new(coords, core::nucleus::NucleusSource::Imported, (width, height))
        .map_err(err)?;
    let adj = core::histograph::build_edges(&nuclei, radius).map_err(err)?;
    let w = adj.weights();
    let n = adj.n();
    let mut out = Vec::new();
    for p in 0..n {
        for q in p + 1..n {
            if w[[p, 0, q]] > 0.0 {
                out.push((p, q, w[[p, 0, q]]));
            }
        }
    }
    Ok(out)
}

/// 50 GLCM texture values of a square patch given as row-major RGB triples.
#[pyfunction]
fn glcm_features(side: usize, pixels: Vec<[u8; 3]>) -> PyResult<Vec<f64>> {
    let patch = core::imaging::Patch::from_pixels(side, (side / 2, side / 2), pixels).map_err(err)?;
    Ok(core::histograph::glcm_features(&patch))
}

/// Nucleus coordinates detected on the hematoxylin channel of an image.
#[pyfunction]
#[pyo3(signature = (image, sigma = 3.0, threshold = 0.2, min_distance = 10.0, estimate_stains = false))]
fn detect_nuclei(image: PathBuf, sigma: f64, threshold: f64, min_distance: f64, estimate_stains: bool) -> PyResult<Vec<(u32, u32)>> {
    let img = core::imaging::load_image(&image).map_err(err)?;
    let od = core::stain::od_transform(&img, [255, 255, 255]).map_err(err)?;
    let m = if estimate_stains {
        core::stain::estimate_stain_matrix(&od, &Default::default()).map_err(err)?
    } else {
        core::stain::StainMatrix::reference()
    };
    let (h, _) = core::stain::deconvolve(&od, &m).map_err(err)?;
    let params = core::nucleus::DetectParams {
        sigma,
        peak_threshold: threshold,
        min_distance,
    };
    Ok(core::nucleus::detect_nuclei(&h, &params).map_err(err)?.coords().to_vec())
}

/// Graph from an image and a nuclei CSV, with optional embeddings CSV.
#[pyfunction]
#[pyo3(signature = (image, nuclei, radius = core::histograph::DEFAULT_RADIUS, window = core::histograph::DEFAULT_WINDOW, embeddings = None, label = None))]
fn build_graph(
    image: PathBuf,
    nuclei: PathBuf,
    radius: f64,
    window: usize,
    embeddings: Option<PathBuf>,
    label: Option<usize>,
) -> PyResult<PyHistograph> {
    let img = core::imaging::load_image(&image).map_err(err)?;
    let set = core::nucleus::load_nuclei_csv(&nuclei, (img.width(), img.height())).map_err(err)?;
    let adj = core::histograph::build_edges(&set, radius).map_err(err)?;
    let emb = match &embeddings {
        Some(p) => Some(core::histograph::load_embeddings_csv(p, set.len()).map_err(err)?),
        None => None,
    };
    let provider: &dyn EmbeddingProvider = match &emb {
        Some(e) => e,
        None => &NoEmbeddings,
    };
    let features = core::histograph::assemble_vertex_features(&img, &set, &adj, provider, window).map_err(err)?;
    let prov = core::histograph::Provenance::new(image.display().to_string())
        .with("nuclei", nuclei.display())
        .with("radius", radius)
        .with("window", window);
    let inner = core::histograph::Histograph::new(set, adj, features, label, prov).map_err(err)?;
    Ok(PyHistograph { inner })
}

fn synth_class(name: &str) -> PyResult<core::synth::SynthClass> {
    match name {
        "clustered" => Ok(core::synth::SynthClass::Clustered),
        "dispersed" => Ok(core::synth::SynthClass::Dispersed),
        other => Err(PyValueError::new_err(format!("unknown class {other:?}; use clustered or dispersed"))),
    }
}

/// One synthetic graph of class `clustered` or `dispersed`.
#[pyfunction]
#[pyo3(signature = (class_name, seed = 0))]
fn synth_graph(class_name: &str, seed: u64) -> PyResult<PyHistograph> {
    let cfg = core::synth::SynthConfig {
        class: synth_class(class_name)?,
        seed,
        ..Default::default()
    };
    Ok(PyHistograph {
        inner: core::synth::generate_graph(&cfg).map_err(err)?,
    })
}

/// Writes a balanced synthetic dataset; returns the manifest paths.
#[pyfunction]
#[pyo3(signature = (out, per_class = 100, seed = 0, train_fraction = 0.75))]
fn synth_dataset(out: PathBuf, per_class: usize, seed: u64, train_fraction: f64) -> PyResult<BTreeMap<String, PathBuf>> {
    core::synth::generate_dataset(&Default::default(), per_class, train_fraction, seed, &out).map_err(err)?;
    Ok(["manifest", "train", "test"]
        .into_iter()
        .map(|k| (k.to_string(), out.join(format!("{k}.csv"))))
        .collect())
}

/// Trains on a manifest and writes the checkpoint. Returns the epoch log
/// as `(epoch, loss, accuracy)` tuples.
#[pyfunction]
#[pyo3(signature = (manifest, out, config = None, seed = None, epochs = None))]
fn train(
    manifest: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let mut cfg = match &config {
        Some(p) => core::train::TrainConfig::load(p).map_err(err)?,
        None => Default::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let m = core::train::TrainingManifest::load(&manifest).map_err(err)?;
    let outcome = core::train::train(&m, &cfg).map_err(err)?;
    core::gcn::save_checkpoint(&outcome.checkpoint, &out).map_err(err)?;
    Ok(outcome.log.iter().map(|r| (r.epoch, r.loss, r.accuracy)).collect())
}

/// Metrics report of a checkpoint on a manifest, as a JSON string.
#[pyfunction]
fn evaluate(manifest: PathBuf, checkpoint: PathBuf) -> PyResult<String> {
    let m = core::train::TrainingManifest::load(&manifest).map_err(err)?;
    let ckpt = load_checkpoint(&checkpoint).map_err(err)?;
    Ok(core::train::evaluate(&m, &ckpt).map_err(err)?.to_json())
}

#[pymodule]
fn histograph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHistograph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(build_edges, m)?)?;
    m.add_function(wrap_pyfunction!(glcm_features, m)?)?;
    m.add_function(wrap_pyfunction!(detect_nuclei, m)?)?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(synth_graph, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
