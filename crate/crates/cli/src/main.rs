//! `histograph` command-line pipeline: detect, build, synth, train, eval.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use histograph::gcn::{load_checkpoint, save_checkpoint};
use histograph::histograph::{
    assemble_vertex_features, build_edges, load_embeddings_csv, serialize, EmbeddingProvider,
    Histograph, NoEmbeddings, Provenance, DEFAULT_RADIUS, DEFAULT_WINDOW,
};
use histograph::imaging::load_image;
use histograph::nucleus::{detect_nuclei, load_nuclei_csv, write_nuclei_csv, DetectParams};
use histograph::stain::{deconvolve, estimate_stain_matrix, od_transform, NmfConfig, StainMatrix};
use histograph::synth::{generate_dataset, SynthConfig};
use histograph::train::{evaluate, train, TrainConfig, TrainingManifest};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "histograph", version, about = "Nucleus graphs from tissue images and a graph convolutional classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect nuclei on the hematoxylin channel of an RGB image and write a x,y CSV
    Detect(DetectArgs),
    /// Build a graph file from an image, nucleus coordinates and optional embeddings
    Build(BuildArgs),
    /// Generate a labeled synthetic dataset (clustered vs dispersed layouts)
    Synth(SynthArgs),
    /// Train a classifier on a manifest of labeled graphs
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest of labeled graphs
    Eval(EvalArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StainMode {
    /// Fixed reference H&E absorbance vectors
    Reference,
    /// Estimate the stain vectors from the image by sparse NMF
    Estimate,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a number in [0, 1], got {s:?}")),
    }
}

fn odd_side(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v % 2 == 1 => Ok(v),
        _ => Err(format!("expected an odd positive integer, got {s:?}")),
    }
}

fn rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parse = |p: &str| p.parse::<u8>().ok().filter(|&v| v > 0);
    match parts.as_slice() {
        [r, g, b] => match (parse(r), parse(g), parse(b)) {
            (Some(r), Some(g), Some(b)) => Ok([r, g, b]),
            _ => Err(format!("channels must be integers in 1..=255, got {s:?}")),
        },
        _ => Err(format!("expected R,G,B, got {s:?}")),
    }
}

fn widths(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(format!("expected comma-separated positive widths, got {s:?}")),
        })
        .collect()
}

#[derive(Args)]
struct DetectArgs {
    /// Input RGB image (PNG or TIFF)
    #[arg(long)]
    image: PathBuf,
    /// Output nuclei CSV
    #[arg(long)]
    out: PathBuf,
    /// Stain vectors used to separate the hematoxylin channel
    #[arg(long, value_enum, default_value = "reference")]
    stain: StainMode,
    /// Background (unstained) intensity per channel, R,G,B
    #[arg(long, value_parser = rgb, default_value = "255,255,255")]
    background: [u8; 3],
    /// Gaussian smoothing sigma in pixels
    #[arg(long, value_parser = positive, default_value_t = DetectParams::default().sigma)]
    sigma: f64,
    /// Peak threshold as a fraction of the smoothed maximum
    #[arg(long, value_parser = unit_interval, default_value_t = DetectParams::default().peak_threshold)]
    threshold: f64,
    /// Minimum distance between detections in pixels
    #[arg(long, value_parser = positive, default_value_t = DetectParams::default().min_distance)]
    min_distance: f64,
    /// Also write the hematoxylin concentration map as a PNG
    #[arg(long)]
    hematoxylin_png: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Input RGB image (PNG or TIFF)
    #[arg(long)]
    image: PathBuf,
    /// Nucleus coordinates, CSV with header x,y
    #[arg(long)]
    nuclei: PathBuf,
    /// Per-nucleus embeddings, headed numeric CSV with one row per nucleus
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Edge distance threshold in pixels
    #[arg(long, value_parser = positive, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    /// Side of the square feature window (odd)
    #[arg(long, value_parser = odd_side, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Class id stored with the graph
    #[arg(long)]
    label: Option<usize>,
    /// Output graph file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (graphs/, manifest.csv, train.csv, test.csv)
    #[arg(long)]
    out: PathBuf,
    /// Graphs per class
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), default_value_t = 100)]
    per_class: u32,
    /// Master seed; per-graph seeds derive from it
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of each class used for training
    #[arg(long, value_parser = unit_interval, default_value_t = 0.75)]
    train_fraction: f64,
    /// Canvas side in pixels
    #[arg(long, value_parser = clap::value_parser!(u32).range(256..), default_value_t = 1024)]
    canvas: u32,
    /// Fewest points per graph
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), default_value_t = 150)]
    min_points: u32,
    /// Most points per graph
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), default_value_t = 400)]
    max_points: u32,
    /// Fewest clusters in clustered graphs
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), default_value_t = 3)]
    min_clusters: u32,
    /// Most clusters in clustered graphs
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), default_value_t = 8)]
    max_clusters: u32,
    /// Smallest cluster radius in pixels
    #[arg(long, value_parser = positive, default_value_t = 60.0)]
    min_radius: f64,
    /// Largest cluster radius in pixels
    #[arg(long, value_parser = positive, default_value_t = 140.0)]
    max_radius: f64,
    /// Share of cluster points on the boundary ring
    #[arg(long, value_parser = unit_interval, default_value_t = 0.3)]
    ring_fraction: f64,
    /// Minimum separation of dispersed points in pixels
    #[arg(long, value_parser = non_negative, default_value_t = 6.0)]
    min_separation: f64,
    /// Standard deviation of the vertex feature noise
    #[arg(long, value_parser = non_negative, default_value_t = 1.0)]
    feature_noise: f64,
    /// Edge distance threshold in pixels
    #[arg(long, value_parser = positive, default_value_t = DEFAULT_RADIUS)]
    edge_radius: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (path,label CSV)
    #[arg(long)]
    manifest: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Config file (flat TOML: conv_widths, pool_k, dense_widths, lr, beta1,
    /// beta2, eps, batch, epochs, patience, min_delta, seed); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training log, one JSON record per line [default: <out>.log.jsonl]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Seed for initialization and shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum epochs [default: 300]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: Option<u32>,
    /// Adam learning rate [default: 0.001]
    #[arg(long, value_parser = positive)]
    lr: Option<f64>,
    /// Graphs per gradient step [default: 8]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    batch: Option<u32>,
    /// Epochs without improvement before stopping [default: 50]
    #[arg(long)]
    patience: Option<u32>,
    /// Pooled vertex count [default: 8]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: Option<u32>,
    /// Graph convolution widths, comma separated [default: 64,32]
    #[arg(long, value_parser = widths)]
    conv_widths: Option<Vec<usize>>,
    /// Hidden dense widths, comma separated [default: 32]
    #[arg(long, value_parser = widths)]
    dense_widths: Option<Vec<usize>>,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest of labeled graphs
    #[arg(long)]
    manifest: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

fn comments(map: &BTreeMap<String, String>) -> Vec<String> {
    map.iter().map(|(k, v)| format!("{k}={v}")).collect()
}

fn base_provenance(stage: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("tool".to_string(), format!("histograph {VERSION}")),
        ("stage".to_string(), stage.to_string()),
    ])
}

fn detect(a: DetectArgs) -> Result<()> {
    let img = load_image(&a.image).with_context(|| format!("detect: reading {}", a.image.display()))?;
    let od = od_transform(&img, a.background).context("detect: optical density")?;
    let matrix = match a.stain {
        StainMode::Reference => StainMatrix::reference(),
        StainMode::Estimate => estimate_stain_matrix(&od, &NmfConfig::default()).context("detect: stain estimation")?,
    };
    let (h, _) = deconvolve(&od, &matrix).context("detect: deconvolution")?;
    if let Some(p) = &a.hematoxylin_png {
        h.save_png(p).with_context(|| format!("detect: writing {}", p.display()))?;
    }
    let params = DetectParams {
        sigma: a.sigma,
        peak_threshold: a.threshold,
        min_distance: a.min_distance,
    };
    let nuclei = detect_nuclei(&h, &params).context("detect: peak finding")?;
    let mut prov = base_provenance("detect");
    let bg = a.background;
    prov.extend([
        ("image".into(), a.image.display().to_string()),
        ("stain".into(), format!("{:?}", matrix)),
        ("background".into(), format!("{},{},{}", bg[0], bg[1], bg[2])),
        ("sigma".into(), a.sigma.to_string()),
        ("threshold".into(), a.threshold.to_string()),
        ("min_distance".into(), a.min_distance.to_string()),
    ]);
    write_nuclei_csv(&nuclei, &a.out, &comments(&prov))
        .with_context(|| format!("detect: writing {}", a.out.display()))?;
    eprintln!("{} nuclei -> {}", nuclei.len(), a.out.display());
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let img = load_image(&a.image).with_context(|| format!("build: reading {}", a.image.display()))?;
    let bounds = (img.width(), img.height());
    let nuclei = load_nuclei_csv(&a.nuclei, bounds).with_context(|| format!("build: reading {}", a.nuclei.display()))?;
    let adjacency = build_edges(&nuclei, a.radius).context("build: edges")?;
    let csv_embeddings;
    let provider: &dyn EmbeddingProvider = match &a.embeddings {
        Some(p) => {
            csv_embeddings = load_embeddings_csv(p, nuclei.len()).with_context(|| format!("build: reading {}", p.display()))?;
            &csv_embeddings
        }
        None => &NoEmbeddings,
    };
    let features = assemble_vertex_features(&img, &nuclei, &adjacency, provider, a.window).context("build: vertex features")?;
    let mut prov = Provenance::new(a.image.display().to_string())
        .with("tool", format!("histograph {VERSION}"))
        .with("nuclei", a.nuclei.display())
        .with("radius", a.radius)
        .with("window", a.window)
        .with("embedding_dim", provider.dim());
    if let Some(p) = &a.embeddings {
        prov = prov.with("embeddings", p.display());
    }
    let g = Histograph::new(nuclei, adjacency, features, a.label, prov).context("build: assembling graph")?;
    serialize(&g, &a.out).with_context(|| format!("build: writing {}", a.out.display()))?;
    eprintln!("{} vertices, {} features -> {}", g.n(), g.features().f(), a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.min_points > a.max_points || a.min_clusters > a.max_clusters || a.min_radius > a.max_radius {
        bail!("synth: each min must not exceed its max");
    }
    let cfg = SynthConfig {
        canvas: (a.canvas as usize, a.canvas as usize),
        n_points: (a.min_points as usize, a.max_points as usize),
        clusters: (a.min_clusters as usize, a.max_clusters as usize),
        radius: (a.min_radius, a.max_radius),
        ring_fraction: a.ring_fraction,
        min_separation: a.min_separation,
        feature_noise: a.feature_noise,
        edge_radius: a.edge_radius,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg, a.per_class as usize, a.train_fraction, a.seed, &a.out)
        .with_context(|| format!("synth: writing dataset to {}", a.out.display()))?;
    let mut prov = base_provenance("synth");
    prov.extend([
        ("seed".into(), a.seed.to_string()),
        ("per_class".into(), a.per_class.to_string()),
        ("train_fraction".into(), a.train_fraction.to_string()),
        ("config".into(), serde_json::to_string(&cfg)?),
    ]);
    for (m, name) in [(&ds.all, "manifest.csv"), (&ds.train, "train.csv"), (&ds.test, "test.csv")] {
        let path = a.out.join(name);
        m.save_with_comments(&path, &comments(&prov))
            .with_context(|| format!("synth: writing {}", path.display()))?;
    }
    eprintln!(
        "{} graphs ({} train, {} test) -> {}",
        ds.all.len(),
        ds.train.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).context("train: config")?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v as usize;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v as usize;
    }
    if let Some(v) = a.patience {
        cfg.patience = v as usize;
    }
    if let Some(v) = a.k {
        cfg.pool_k = v as usize;
    }
    if let Some(v) = a.conv_widths {
        cfg.conv_widths = v;
    }
    if let Some(v) = a.dense_widths {
        cfg.dense_widths = v;
    }
    cfg.validate().context("train: config")?;
    let manifest = TrainingManifest::load(&a.manifest).with_context(|| format!("train: reading {}", a.manifest.display()))?;
    let mut outcome = train(&manifest, &cfg).context("train")?;
    outcome.checkpoint.provenance.extend(base_provenance("train"));
    outcome
        .checkpoint
        .provenance
        .insert("manifest".into(), a.manifest.display().to_string());
    save_checkpoint(&outcome.checkpoint, &a.out).with_context(|| format!("train: writing {}", a.out.display()))?;

    let log_path = a.log.unwrap_or_else(|| suffixed(&a.out, ".log.jsonl"));
    let mut log = Vec::new();
    writeln!(log, "{}", serde_json::json!({ "provenance": outcome.checkpoint.provenance }))?;
    for r in &outcome.log {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
    }
    std::fs::write(&log_path, log).with_context(|| format!("train: writing {}", log_path.display()))?;
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "{} epochs, final loss {:.6}, train accuracy {:.4} -> {}",
            outcome.log.len(),
            last.loss,
            last.accuracy,
            a.out.display()
        );
    }
    Ok(())
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("eval: reading {}", a.checkpoint.display()))?;
    let manifest = TrainingManifest::load(&a.manifest).with_context(|| format!("eval: reading {}", a.manifest.display()))?;
    let mut report = evaluate(&manifest, &ckpt).context("eval")?;
    report.provenance = base_provenance("eval");
    report.provenance.extend([
        ("checkpoint".into(), a.checkpoint.display().to_string()),
        ("manifest".into(), a.manifest.display().to_string()),
    ]);
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).with_context(|| format!("eval: writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => detect(a),
        Command::Build(a) => build(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
