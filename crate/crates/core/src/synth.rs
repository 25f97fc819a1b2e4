//! Labeled synthetic graphs whose classes differ only in spatial layout.
//!
//! Clustered samples crowd points into a few Gaussian clusters, each
//! fenced by a sparse ring at the cluster radius. Dispersed samples spread
//! points uniformly with a minimum separation. Vertex features come from
//! one class-agnostic distribution, so only structure carries the label.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histograph::{build_edges, serialize, Histograph, Provenance, VertexFeatureMatrix, DEFAULT_RADIUS};
use crate::nucleus::{Coord, NucleusSet, NucleusSource};
use crate::train::{ManifestEntry, TrainingManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthClass {
    Clustered,
    Dispersed,
}

impl SynthClass {
    pub const ALL: [SynthClass; 2] = [SynthClass::Clustered, SynthClass::Dispersed];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::Clustered => "clustered",
            SynthClass::Dispersed => "dispersed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub canvas: (usize, usize),
    /// Inclusive point-count range.
    pub n_points: (usize, usize),
    pub class: SynthClass,
    /// Inclusive cluster-count range.
    pub clusters: (usize, usize),
    pub radius: (f64, f64),
    /// Share of each cluster's points placed on its boundary ring.
    pub ring_fraction: f64,
    pub min_separation: f64,
    pub feature_noise: f64,
    pub edge_radius: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas: (1024, 1024),
            n_points: (150, 400),
            class: SynthClass::Clustered,
            clusters: (3, 8),
            radius: (60.0, 140.0),
            ring_fraction: 0.3,
            min_separation: 6.0,
            feature_noise: 1.0,
            edge_radius: DEFAULT_RADIUS,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.canvas.0 < 256 || self.canvas.1 < 256 {
            return bad("canvas must be at least 256x256");
        }
        if self.n_points.0 == 0 || self.n_points.0 > self.n_points.1 {
            return bad("point range must be non-empty and start at >= 1");
        }
        if self.clusters.0 == 0 || self.clusters.0 > self.clusters.1 {
            return bad("cluster range must be non-empty and start at >= 1");
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return bad("radius range must be non-empty and positive");
        }
        if !(0.0..=1.0).contains(&self.ring_fraction) {
            return bad("ring fraction must lie in [0, 1]");
        }
        if !(self.min_separation >= 0.0 && self.feature_noise >= 0.0 && self.edge_radius > 0.0) {
            return bad("separation, noise and edge radius must be non-negative");
        }
        Ok(())
    }

    /// Seed for sample `index` of a dataset with master seed `seed`.
    pub fn sample_seed(seed: u64, index: u64) -> u64 {
        // splitmix64 finalizer over (seed, index)
        let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

fn in_canvas(canvas: (usize, usize), x: f64, y: f64) -> Option<Coord> {
    let (xr, yr) = (x.round(), y.round());
    (xr >= 0.0 && yr >= 0.0 && xr < canvas.0 as f64 && yr < canvas.1 as f64).then_some((xr as u32, yr as u32))
}

fn clustered_points(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Coord>> {
    let k = rng.random_range(cfg.clusters.0..=cfg.clusters.1);
    let (w, h) = (cfg.canvas.0 as f64, cfg.canvas.1 as f64);
    let mut taken = HashSet::new();
    let mut coords = Vec::with_capacity(n);
    for c in 0..k {
        let r = rng.random_range(cfg.radius.0..=cfg.radius.1);
        let margin = r.min(w / 2.0 - 1.0).min(h / 2.0 - 1.0);
        let cx = rng.random_range(margin..=w - 1.0 - margin);
        let cy = rng.random_range(margin..=h - 1.0 - margin);
        let share = n / k + usize::from(c < n % k);
        let ring = (share as f64 * cfg.ring_fraction).round() as usize;
        let interior = Normal::new(0.0, r / 2.0).expect("positive spread");
        let mut placed = 0;
        let mut attempts = 0;
        while placed < share {
            attempts += 1;
            if attempts > 1000 * share.max(1) {
                return Err(Error::Infeasible(format!("cannot place {share} distinct points in a cluster of radius {r:.1}")));
            }
            let (x, y) = if placed < ring {
                let t = rng.random_range(0.0..2.0 * PI);
                let rr = r + rng.random_range(-2.0..=2.0);
                (cx + rr * t.cos(), cy + rr * t.sin())
            } else {
                (cx + interior.sample(rng), cy + interior.sample(rng))
            };
            if let Some(p) = in_canvas(cfg.canvas, x, y) {
                if taken.insert(p) {
                    coords.push(p);
                    placed += 1;
                }
            }
        }
    }
    Ok(coords)
}

fn dispersed_points(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Coord>> {
    let (w, h) = cfg.canvas;
    let sep = cfg.min_separation;
    // Disc packing bound: n discs of diameter `sep` need about n·sep²·(√3/2).
    if n as f64 * sep * sep * 0.866 > 0.5 * (w * h) as f64 {
        return Err(Error::Infeasible(format!("{n} points at separation {sep} do not fit a {w}x{h} canvas")));
    }
    let cell = sep.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    let mut coords: Vec<Coord> = Vec::with_capacity(n);
    let mut attempts = 0;
    while coords.len() < n {
        attempts += 1;
        if attempts > 10_000 * n {
            return Err(Error::Infeasible(format!("rejection sampling stalled after {} points", coords.len())));
        }
        let p = (rng.random_range(0..w as u32), rng.random_range(0..h as u32));
        let (gx, gy) = ((p.0 as f64 / cell) as usize, (p.1 as f64 / cell) as usize);
        let clash = (gy.saturating_sub(1)..=(gy + 1).min(gh - 1)).any(|yy| {
            (gx.saturating_sub(1)..=(gx + 1).min(gw - 1)).any(|xx| {
                grid[yy * gw + xx].iter().any(|&j| {
                    let q = coords[j];
                    let d = (p.0 as f64 - q.0 as f64).hypot(p.1 as f64 - q.1 as f64);
                    d < sep || d == 0.0
                })
            })
        });
        if !clash {
            grid[gy * gw + gx].push(coords.len());
            coords.push(p);
        }
    }
    Ok(coords)
}

/// One labeled graph, bit-identical for a fixed config.
pub fn generate_graph(cfg: &SynthConfig) -> Result<Histograph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = rng.random_range(cfg.n_points.0..=cfg.n_points.1);
    let coords = match cfg.class {
        SynthClass::Clustered => clustered_points(cfg, n, &mut rng)?,
        SynthClass::Dispersed => dispersed_points(cfg, n, &mut rng)?,
    };
    let nuclei = NucleusSet::new(coords, NucleusSource::Synthetic, cfg.canvas)?;
    let adjacency = build_edges(&nuclei, cfg.edge_radius)?;
    let layout = VertexFeatureMatrix::default_layout(0);
    let f = 54;
    let mut feature_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    feature_rng.set_stream(1);
    let values = Array2::from_shape_simple_fn((nuclei.len(), f), || {
        cfg.feature_noise * feature_rng.sample::<f64, _>(StandardNormal)
    });
    let features = VertexFeatureMatrix::new(values, layout)?;
    let provenance = Provenance::new("synth")
        .with("class", cfg.class.name())
        .with("seed", cfg.seed)
        .with("canvas", format!("{}x{}", cfg.canvas.0, cfg.canvas.1))
        .with("n_points", format!("{}..{}", cfg.n_points.0, cfg.n_points.1))
        .with("clusters", format!("{}..{}", cfg.clusters.0, cfg.clusters.1))
        .with("cluster_radius", format!("{}..{}", cfg.radius.0, cfg.radius.1))
        .with("ring_fraction", cfg.ring_fraction)
        .with("min_separation", cfg.min_separation)
        .with("feature_noise", cfg.feature_noise)
        .with("radius", cfg.edge_radius);
    Histograph::new(nuclei, adjacency, features, Some(cfg.class.label()), provenance)
}

/// Graph files plus the three manifests written by `generate_dataset`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub all: TrainingManifest,
    pub train: TrainingManifest,
    pub test: TrainingManifest,
    pub dir: PathBuf,
}

/// In-memory dataset: `(graphs, is_train)` with the same sampling and split
/// as `generate_dataset`.
pub fn generate_samples(base: &SynthConfig, per_class: usize, train_fraction: f64, seed: u64) -> Result<(Vec<Histograph>, Vec<bool>)> {
    if per_class == 0 {
        return Err(Error::InvalidParameter("need at least one graph per class".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidParameter("train fraction must lie in [0, 1]".into()));
    }
    let jobs: Vec<(SynthClass, usize)> = SynthClass::ALL
        .iter()
        .flat_map(|&c| (0..per_class).map(move |i| (c, i)))
        .collect();
    let graphs = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(class, _))| {
            let cfg = SynthConfig {
                class,
                seed: SynthConfig::sample_seed(seed, idx as u64),
                ..base.clone()
            };
            generate_graph(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_train = (per_class as f64 * train_fraction).round() as usize;
    let is_train = jobs.iter().map(|&(_, i)| i < n_train).collect();
    Ok((graphs, is_train))
}

/// Writes `per_class` graphs of each class under `dir/graphs/` with
/// `manifest.csv`, `train.csv` and `test.csv` (first `train_fraction` of
/// each class trains).
pub fn generate_dataset(
    base: &SynthConfig,
    per_class: usize,
    train_fraction: f64,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (graphs, is_train) = generate_samples(base, per_class, train_fraction, seed)?;
    let graph_dir = dir.join("graphs");
    std::fs::create_dir_all(&graph_dir).map_err(|e| Error::io(&graph_dir, e))?;
    let entries = graphs
        .par_iter()
        .enumerate()
        .map(|(idx, g)| {
            let label = g.label.expect("synthetic graphs are labeled");
            let name = format!("{}_{:04}.graph.json", SynthClass::ALL[label].name(), idx % per_class);
            let path = graph_dir.join(name);
            serialize(g, &path)?;
            Ok(ManifestEntry { path, label })
        })
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<String> = SynthClass::ALL.iter().map(|c| c.name().to_string()).collect();
    let pick = |want: bool| {
        let chosen = entries
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(e, _)| e.clone())
            .collect();
        TrainingManifest::new(chosen, classes.clone())
    };
    let dataset = Dataset {
        all: TrainingManifest::new(entries.clone(), classes.clone())?,
        train: pick(true)?,
        test: pick(false)?,
        dir: dir.to_path_buf(),
    };
    dataset.all.save(dir.join("manifest.csv"))?;
    dataset.train.save(dir.join("train.csv"))?;
    dataset.test.save(dir.join("test.csv"))?;
    Ok(dataset)
}
