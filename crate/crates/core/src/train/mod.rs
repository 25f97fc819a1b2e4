//! Supervised training and evaluation over labeled graph sets.

mod adam;
mod manifest;
mod metrics;
mod standardize;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use manifest::{ManifestEntry, TrainingManifest};
pub use metrics::MetricsReport;
pub use standardize::{FeatureStats, STD_FLOOR};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{
    argmax, forward, model_backward, softmax_cross_entropy, Architecture, Checkpoint, GraphInput,
    ModelParams,
};
use crate::histograph::{deserialize, Histograph};

/// Architecture and optimization settings. Every key is optional in the
/// config file; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub conv_widths: Vec<usize>,
    pub pool_k: usize,
    pub dense_widths: Vec<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Smallest loss decrease that resets the patience counter.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let adam = AdamConfig::default();
        Self {
            conv_widths: arch.conv_widths,
            pool_k: arch.pool_k,
            dense_widths: arch.dense_widths,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch: 8,
            epochs: 300,
            patience: 50,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.conv_widths.iter().chain(&self.dense_widths).any(|&w| w == 0) {
            return bad("layer widths must be >= 1");
        }
        if self.pool_k == 0 {
            return bad("pool_k must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be >= 1");
        }
        Ok(())
    }

    pub fn architecture(&self, relations: usize) -> Architecture {
        Architecture {
            conv_widths: self.conv_widths.clone(),
            pool_k: self.pool_k,
            dense_widths: self.dense_widths.clone(),
            relations,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Flat `key=value` view for provenance records.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        [
            ("conv_widths", list(&self.conv_widths)),
            ("pool_k", self.pool_k.to_string()),
            ("dense_widths", list(&self.dense_widths)),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("min_delta", self.min_delta.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Reads every graph of a manifest, labeling each from its entry.
pub fn load_graphs(manifest: &TrainingManifest) -> Result<Vec<Histograph>> {
    manifest
        .entries()
        .par_iter()
        .map(|e| {
            let mut g = deserialize(&e.path)?;
            g.label = Some(e.label);
            Ok(g)
        })
        .collect()
}

fn labels_of(graphs: &[Histograph], classes: usize) -> Result<Vec<usize>> {
    graphs
        .iter()
        .map(|g| match g.label {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(Error::LabelOutOfRange { label: l, classes }),
            None => Err(Error::InvalidParameter("unlabeled graph in training set".into())),
        })
        .collect()
}

pub fn train(manifest: &TrainingManifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if manifest.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if manifest.present_classes() < 2 {
        return Err(Error::TooFewClasses(manifest.present_classes()));
    }
    train_graphs(&load_graphs(manifest)?, manifest.classes(), cfg)
}

/// Trains on labeled in-memory graphs. Each mini-batch accumulates
/// per-graph gradients (computed in parallel, reduced in batch order)
/// before one Adam step.
pub fn train_graphs(graphs: &[Histograph], class_names: &[String], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let labels = labels_of(graphs, class_names.len())?;
    let present = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if present < 2 {
        return Err(Error::TooFewClasses(present));
    }
    let l = graphs[0].adjacency().l();
    if graphs.iter().any(|g| g.adjacency().l() != l) {
        return Err(Error::ShapeMismatch("graphs differ in relation count".into()));
    }
    let stats = FeatureStats::fit(graphs)?;
    let inputs = standardized_inputs(graphs, &stats)?;
    let mut params = ModelParams::init(&cfg.architecture(l), stats.mean.len(), class_names.len(), cfg.seed)?;
    let mut opt = OptimizerState::new(&params, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut log = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| model_backward(&inputs[i], &params, |z| softmax_cross_entropy(z, labels[i])))
                .collect::<Result<_>>()?;
            let mut acc = params.zeros_like();
            for ((loss, logits, grads), &i) in results.iter().zip(batch) {
                acc.add_scaled(1.0, grads);
                loss_sum += loss;
                correct += usize::from(argmax(logits) == labels[i]);
            }
            acc.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &acc, &mut opt)?;
        }
        let loss = loss_sum / graphs.len() as f64;
        log.push(EpochRecord {
            epoch,
            loss,
            accuracy: correct as f64 / graphs.len() as f64,
        });
        if loss < best - cfg.min_delta {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let mut provenance = cfg.to_map();
    provenance.insert("train_graphs".into(), graphs.len().to_string());
    provenance.insert("epochs_run".into(), log.len().to_string());
    let checkpoint = Checkpoint {
        params,
        stats: Some(stats),
        class_names: class_names.to_vec(),
        provenance,
    };
    Ok(TrainOutcome { checkpoint, log })
}

fn standardized_inputs(graphs: &[Histograph], stats: &FeatureStats) -> Result<Vec<GraphInput>> {
    graphs
        .par_iter()
        .map(|g| {
            let mut g = g.clone();
            stats.apply(&mut g)?;
            Ok(GraphInput::from_histograph(&g))
        })
        .collect()
}

/// Predicted class per graph under the checkpoint's own statistics.
pub fn predict(graphs: &[Histograph], ckpt: &Checkpoint) -> Result<Vec<(usize, Vec<f64>)>> {
    let inputs = match &ckpt.stats {
        Some(s) => standardized_inputs(graphs, s)?,
        None => graphs.iter().map(GraphInput::from_histograph).collect(),
    };
    inputs
        .par_iter()
        .map(|x| {
            let logits = forward(x, &ckpt.params)?;
            Ok((argmax(&logits), logits))
        })
        .collect()
}

/// Single deterministic pass. The report does not depend on graph order.
pub fn evaluate_graphs(graphs: &[Histograph], ckpt: &Checkpoint) -> Result<MetricsReport> {
    let classes = ckpt.params.classes();
    let labels = labels_of(graphs, classes)?;
    let predictions = predict(graphs, ckpt)?;
    let mut pairs = Vec::with_capacity(graphs.len());
    let mut losses = Vec::with_capacity(graphs.len());
    for ((pred, logits), &label) in predictions.iter().zip(&labels) {
        pairs.push((label, *pred));
        losses.push(softmax_cross_entropy(logits, label)?.0);
    }
    // Sum in value order so the mean is bit-identical under reordering.
    losses.sort_by(f64::total_cmp);
    let names = if ckpt.class_names.len() == classes {
        ckpt.class_names.clone()
    } else {
        (0..classes).map(|i| i.to_string()).collect()
    };
    Ok(MetricsReport::from_predictions(names, &pairs, losses.iter().sum()))
}

pub fn evaluate(manifest: &TrainingManifest, ckpt: &Checkpoint) -> Result<MetricsReport> {
    evaluate_graphs(&load_graphs(manifest)?, ckpt)
}
