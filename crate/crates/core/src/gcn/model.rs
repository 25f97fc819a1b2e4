use std::collections::HashMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    DenseParams, EmbedPoolCache, EmbedPoolParams, GraphConvCache, GraphConvParams,
};
use super::relations::{normalize_adjacency, Relations};
use crate::error::{Error, Result};
use crate::histograph::Histograph;

/// Widths of the default stack:
/// `conv(f→64) relu conv(64→32) relu pool(8) flatten dense(256→32) relu dense(32→C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub conv_widths: Vec<usize>,
    pub pool_k: usize,
    pub dense_widths: Vec<usize>,
    pub relations: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            conv_widths: vec![64, 32],
            pool_k: 8,
            dense_widths: vec![32],
            relations: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    GraphConv(GraphConvParams),
    EmbedPool(EmbedPoolParams),
    Dense(DenseParams),
    Relu,
}

fn contiguous<T>(a: Option<T>) -> T {
    a.expect("parameters are contiguous")
}

impl Layer {
    fn zeros_like(&self) -> Self {
        match self {
            Layer::GraphConv(p) => Layer::GraphConv(p.zeros_like()),
            Layer::EmbedPool(p) => Layer::EmbedPool(p.zeros_like()),
            Layer::Dense(p) => Layer::Dense(p.zeros_like()),
            Layer::Relu => Layer::Relu,
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Layer::GraphConv(p) => vec![contiguous(p.taps.as_slice()), contiguous(p.bias.as_slice())],
            Layer::EmbedPool(p) => vec![contiguous(p.w.as_slice())],
            Layer::Dense(p) => vec![contiguous(p.w.as_slice()), contiguous(p.bias.as_slice())],
            Layer::Relu => vec![],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::GraphConv(p) => vec![contiguous(p.taps.as_slice_mut()), contiguous(p.bias.as_slice_mut())],
            Layer::EmbedPool(p) => vec![contiguous(p.w.as_slice_mut())],
            Layer::Dense(p) => vec![contiguous(p.w.as_slice_mut()), contiguous(p.bias.as_slice_mut())],
            Layer::Relu => vec![],
        }
    }
}

/// All learnable tensors, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    input_width: usize,
    classes: usize,
}

/// Parameter-shaped gradient container.
pub type Gradients = ModelParams;

impl ModelParams {
    /// Checks that layer shapes compose: graph layers first, at least one
    /// pool before the first dense layer, `classes` outputs.
    pub fn new(layers: Vec<Layer>, input_width: usize, classes: usize) -> Result<Self> {
        let mismatch = |m: String| Err(Error::ShapeMismatch(m));
        let mut width = input_width;
        let mut relations: Option<usize> = None;
        let mut pooled: Option<usize> = None;
        let mut flat: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::GraphConv(p) => {
                    if flat.is_some() {
                        return mismatch(format!("layer {i}: graph_conv after dense"));
                    }
                    if p.f_in() != width {
                        return mismatch(format!("layer {i}: graph_conv input {} != {width}", p.f_in()));
                    }
                    if *relations.get_or_insert(p.relations()) != p.relations() {
                        return mismatch(format!("layer {i}: inconsistent relation count"));
                    }
                    width = p.f_out();
                }
                Layer::EmbedPool(p) => {
                    if flat.is_some() {
                        return mismatch(format!("layer {i}: embed_pool after dense"));
                    }
                    if p.f_in() != width {
                        return mismatch(format!("layer {i}: embed_pool input {} != {width}", p.f_in()));
                    }
                    pooled = Some(p.k());
                }
                Layer::Dense(p) => {
                    let d = match flat {
                        Some(d) => d,
                        None => match pooled {
                            Some(k) => k * width,
                            None => return mismatch(format!("layer {i}: dense before any embed_pool")),
                        },
                    };
                    if p.d_in() != d {
                        return mismatch(format!("layer {i}: dense input {} != {d}", p.d_in()));
                    }
                    flat = Some(p.d_out());
                }
                Layer::Relu => {}
            }
        }
        let out = match (flat, pooled) {
            (Some(d), _) => d,
            (None, Some(k)) => k * width,
            (None, None) => return mismatch("model has no embed_pool layer".into()),
        };
        if out != classes {
            return mismatch(format!("model outputs {out} values for {classes} classes"));
        }
        Ok(Self {
            layers,
            input_width,
            classes,
        })
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn init(arch: &Architecture, input_width: usize, classes: usize, seed: u64) -> Result<Self> {
        if arch.pool_k == 0 {
            return Err(Error::InvalidParameter("pool_k must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut width = input_width;
        for &w in &arch.conv_widths {
            layers.push(Layer::GraphConv(GraphConvParams::init(&mut rng, arch.relations, width, w)));
            layers.push(Layer::Relu);
            width = w;
        }
        layers.push(Layer::EmbedPool(EmbedPoolParams::init(&mut rng, width, arch.pool_k)));
        let mut d = width * arch.pool_k;
        for &w in &arch.dense_widths {
            layers.push(Layer::Dense(DenseParams::init(&mut rng, d, w)));
            layers.push(Layer::Relu);
            d = w;
        }
        layers.push(Layer::Dense(DenseParams::init(&mut rng, d, classes)));
        Self::new(layers, input_width, classes)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            input_width: self.input_width,
            classes: self.classes,
        }
    }

    /// Flat views of every parameter tensor, in declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    /// Human-readable name per tensor, aligned with `tensors()`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::GraphConv(_) => {
                    names.push(format!("{i}.graph_conv.taps"));
                    names.push(format!("{i}.graph_conv.bias"));
                }
                Layer::EmbedPool(_) => names.push(format!("{i}.embed_pool.w")),
                Layer::Dense(_) => {
                    names.push(format!("{i}.dense.w"));
                    names.push(format!("{i}.dense.bias"));
                }
                Layer::Relu => {}
            }
        }
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha · other`; shapes must match.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Model input: vertex features plus normalized relations, prepared once
/// per graph.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub features: Array2<f64>,
    pub relations: Relations,
}

impl GraphInput {
    pub fn from_histograph(g: &Histograph) -> Self {
        Self {
            features: g.features().values().clone(),
            relations: Relations::from_tensor(&normalize_adjacency(g.adjacency())),
        }
    }
}

enum Cache {
    GraphConv { stage: usize, cache: GraphConvCache },
    EmbedPool { stage_in: usize, stage_out: usize, cache: EmbedPoolCache },
    Dense { input: Array2<f64> },
    Relu { output: Array2<f64> },
}

/// Activations recorded by `forward_cached`, consumed by `backward`.
pub struct ForwardCache {
    stages: Vec<Relations>,
    layers: Vec<Cache>,
    /// `(k, f)` of the pooled matrix when it was flattened.
    flatten: Option<(usize, usize)>,
}

fn flatten(m: Array2<f64>) -> Array2<f64> {
    let len = m.len();
    m.into_shape_with_order((1, len)).expect("contiguous")
}

/// Forward pass recording everything the backward pass needs.
pub fn forward_cached(input: &GraphInput, m: &ModelParams) -> Result<(Vec<f64>, ForwardCache)> {
    if input.features.ncols() != m.input_width {
        return Err(Error::ShapeMismatch(format!(
            "graph features have width {}, model expects {}",
            input.features.ncols(),
            m.input_width
        )));
    }
    let mut stages = vec![input.relations.clone()];
    let mut caches = Vec::with_capacity(m.layers.len());
    let mut x = input.features.clone();
    let mut flattened: Option<(usize, usize)> = None;
    for layer in &m.layers {
        match layer {
            Layer::GraphConv(p) => {
                let stage = stages.len() - 1;
                let (out, cache) = p.forward(&stages[stage], x.view())?;
                caches.push(Cache::GraphConv { stage, cache });
                x = out;
            }
            Layer::EmbedPool(p) => {
                let stage_in = stages.len() - 1;
                let (out, rel, cache) = p.forward(&stages[stage_in], x.view())?;
                stages.push(rel);
                caches.push(Cache::EmbedPool {
                    stage_in,
                    stage_out: stages.len() - 1,
                    cache,
                });
                x = out;
            }
            Layer::Dense(p) => {
                if flattened.is_none() {
                    flattened = Some(x.dim());
                    x = flatten(x);
                }
                let out = p.forward(x.view())?;
                caches.push(Cache::Dense { input: x });
                x = out;
            }
            Layer::Relu => {
                x.mapv_inplace(|v| v.max(0.0));
                caches.push(Cache::Relu { output: x.clone() });
            }
        }
    }
    if flattened.is_none() {
        flattened = Some(x.dim());
        x = flatten(x);
    }
    let logits = x.into_iter().collect();
    Ok((
        logits,
        ForwardCache {
            stages,
            layers: caches,
            flatten: flattened,
        },
    ))
}

pub fn forward(input: &GraphInput, m: &ModelParams) -> Result<Vec<f64>> {
    forward_cached(input, m).map(|(logits, _)| logits)
}

/// Class logits for one graph; normalizes its adjacency first.
pub fn model_forward(g: &Histograph, m: &ModelParams) -> Result<Vec<f64>> {
    forward(&GraphInput::from_histograph(g), m)
}

/// Exact gradients of `upstream · logits` w.r.t. every parameter.
pub fn backward(m: &ModelParams, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
    if upstream.len() != m.classes {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient has {} values for {} classes",
            upstream.len(),
            m.classes
        )));
    }
    if cache.layers.len() != m.layers.len() {
        return Err(Error::ShapeMismatch("forward cache does not match model".into()));
    }
    let mut grads = m.zeros_like();
    let (k, f) = cache.flatten.expect("forward always flattens");
    let mut g = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).expect("row");
    let mut is_flat = true;
    let mut adj_grads: HashMap<usize, Vec<Array2<f64>>> = HashMap::new();

    for (idx, (layer, layer_cache)) in m.layers.iter().zip(&cache.layers).enumerate().rev() {
        let grad_layer = &mut grads.layers[idx];
        match (layer, layer_cache, grad_layer) {
            (Layer::Dense(p), Cache::Dense { input }, Layer::Dense(gp)) => {
                g = p.backward(input.view(), g.view(), gp);
            }
            (Layer::Relu, Cache::Relu { output }, Layer::Relu) => {
                let g_shape = g.dim();
                let out_view = if output.dim() == g_shape {
                    output.view()
                } else {
                    output.view().into_shape_with_order(g_shape).expect("same size")
                };
                ndarray::Zip::from(&mut g)
                    .and(&out_view)
                    .for_each(|d, &o| if o <= 0.0 { *d = 0.0 });
            }
            (Layer::GraphConv(p), Cache::GraphConv { stage, cache: c }, Layer::GraphConv(gp)) => {
                if is_flat {
                    g = g.into_shape_with_order((k, f)).expect("flatten size");
                    is_flat = false;
                }
                let want_adj = *stage > 0;
                let (dv, dadj) = p.backward(&cache.stages[*stage], c, g.view(), gp, want_adj);
                if let Some(d) = dadj {
                    accumulate(&mut adj_grads, *stage, d);
                }
                g = dv;
            }
            (
                Layer::EmbedPool(p),
                Cache::EmbedPool { stage_in, stage_out, cache: c },
                Layer::EmbedPool(gp),
            ) => {
                if is_flat {
                    g = g.into_shape_with_order((k, f)).expect("flatten size");
                    is_flat = false;
                }
                let upstream_adj = adj_grads.remove(stage_out);
                let want_adj = *stage_in > 0;
                let (dv, dadj) = p.backward(c, g.view(), upstream_adj.as_deref(), gp, want_adj);
                if let Some(d) = dadj {
                    accumulate(&mut adj_grads, *stage_in, d);
                }
                g = dv;
            }
            _ => return Err(Error::ShapeMismatch("forward cache does not match model".into())),
        }
    }
    Ok(grads)
}

fn accumulate(map: &mut HashMap<usize, Vec<Array2<f64>>>, stage: usize, d: Vec<Array2<f64>>) {
    match map.get_mut(&stage) {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e += &x),
        None => {
            map.insert(stage, d);
        }
    }
}

/// Forward then backward for one graph under `loss(logits, label)`.
pub fn model_backward(
    input: &GraphInput,
    m: &ModelParams,
    upstream: impl FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<(f64, Vec<f64>, Gradients)> {
    let (logits, cache) = forward_cached(input, m)?;
    let (loss, dlogits) = upstream(&logits)?;
    let grads = backward(m, &cache, &dlogits)?;
    Ok((loss, logits, grads))
}

/// Index of the largest logit; ties go to the lower class id.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
