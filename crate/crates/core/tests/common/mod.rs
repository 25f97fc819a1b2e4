#![allow(dead_code)]

use histograph::gcn::{forward, model_backward, softmax_cross_entropy, GraphInput, ModelParams};
use histograph::histograph::{build_edges, Histograph, Provenance, VertexFeatureMatrix};
use histograph::nucleus::{NucleusSet, NucleusSource};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use histograph::imaging::RgbImage;
use histograph::stain::{OdImage, StainMatrix};

/// Random graph: `n` distinct points in a `span`² square, unit-normal
/// features of width `f`, edges at radius 100.
pub fn random_graph(n: usize, f: usize, span: u32, seed: u64) -> Histograph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = std::collections::BTreeSet::new();
    let mut coords = Vec::new();
    while coords.len() < n {
        let p = (rng.random_range(0..span), rng.random_range(0..span));
        if pts.insert(p) {
            coords.push(p);
        }
    }
    let nuclei = NucleusSet::new(coords, NucleusSource::Synthetic, (span as usize, span as usize)).unwrap();
    let adj = build_edges(&nuclei, 100.0).unwrap();
    let values = Array2::from_shape_simple_fn((n, f), || rng.sample::<f64, _>(StandardNormal));
    let layout = if f >= 54 {
        VertexFeatureMatrix::default_layout(f - 54)
    } else {
        vec![histograph::histograph::Segment { name: "x".into(), offset: 0, len: f }]
    };
    let features = VertexFeatureMatrix::new(values, layout).unwrap();
    Histograph::new(nuclei, adj, features, None, Provenance::new("random")).unwrap()
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Denominator floor of the gradient check. Central differences at step
/// 1e-5 carry roundoff of about eps·|loss|/step ~ 1e-10, so smaller
/// gradient entries are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

/// Per tensor: (name, max relative error, max |analytic|) of analytic vs
/// central-difference gradients of the cross-entropy loss.
pub fn gradient_check(g: &Histograph, m: &ModelParams, label: usize, step: f64) -> Vec<(String, f64, f64)> {
    let input = GraphInput::from_histograph(g);
    let loss = |m: &ModelParams| {
        let logits = forward(&input, m).unwrap();
        softmax_cross_entropy(&logits, label).unwrap().0
    };
    let (_, _, grads) =
        model_backward(&input, m, |logits| softmax_cross_entropy(logits, label)).unwrap();
    let names = m.tensor_names();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut out = Vec::new();
    let mut probe = m.clone();
    for (t, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..analytic[t].len() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = loss(&probe);
            probe.tensors_mut()[t][i] = orig - step;
            let dn = loss(&probe);
            probe.tensors_mut()[t][i] = orig;
            let fd = (up - dn) / (2.0 * step);
            let a = analytic[t][i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
            scale = scale.max(a.abs());
        }
        out.push((name.clone(), worst, scale));
    }
    out
}

/// Mean local clustering coefficient; vertices of degree < 2 count as 0.
pub fn mean_clustering(g: &Histograph) -> f64 {
    let n = g.n();
    let w = g.adjacency().weights();
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|p| (0..n).filter(|&q| w[[p, 0, q]] > 0.0).collect())
        .collect();
    let mut total = 0.0;
    for p in 0..n {
        let k = nbrs[p].len();
        if k < 2 {
            continue;
        }
        let mut links = 0;
        for (i, &a) in nbrs[p].iter().enumerate() {
            for &b in &nbrs[p][i + 1..] {
                if w[[a, 0, b]] > 0.0 {
                    links += 1;
                }
            }
        }
        total += 2.0 * links as f64 / (k * (k - 1)) as f64;
    }
    total / n as f64
}

pub fn synth_graphs(class: histograph::synth::SynthClass, count: usize, seed0: u64) -> Vec<Histograph> {
    (0..count)
        .map(|i| {
            let cfg = histograph::synth::SynthConfig { class, seed: seed0 + i as u64, ..Default::default() };
            histograph::synth::generate_graph(&cfg).unwrap()
        })
        .collect()
}

/// Mostly single-stain pixels with a little bleed, plus some mixtures.
pub fn mixed(m: &StainMatrix, n: usize, seed: u64) -> OdImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let (h, e) = if u < 0.45 {
                let h = rng.random_range(0.2..1.5);
                (h, h * rng.random_range(0.0..0.03))
            } else if u < 0.9 {
                let e = rng.random_range(0.2..1.0);
                (e * rng.random_range(0.0..0.03), e)
            } else {
                (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
            };
            m.mix(h, e)
        })
        .collect();
    OdImage {
        width: n,
        height: 1,
        values,
    }
}

/// Renders concentrations to 8-bit RGB through Beer–Lambert.
pub fn render(m: &StainMatrix, conc: &[(f64, f64)], width: usize, background: f64) -> RgbImage {
    let pixels = conc
        .iter()
        .map(|&(h, e)| {
            let od = m.mix(h, e);
            od.map(|d| ((background + 1.0) * 10f64.powf(-d) - 1.0).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    RgbImage::new(width, conc.len() / width, pixels).unwrap()
}

