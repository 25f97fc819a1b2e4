//! Parameter records and per-layer forward / backward passes.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use super::relations::{Relation, Relations};
use crate::error::{Error, Result};

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, shape: (usize, usize)) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.random_range(-limit..limit))
}

/// Spatial graph convolution. Tap 0 acts on each vertex itself, tap `l`
/// on the aggregate over relation slice `l - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConvParams {
    /// `[(l + 1), f_in, f_out]`
    pub taps: Array3<f64>,
    pub bias: Array1<f64>,
}

/// Activations a graph convolution needs for its backward pass.
#[derive(Debug, Clone)]
pub struct GraphConvCache {
    input: Array2<f64>,
    aggregates: Vec<Array2<f64>>,
}

impl GraphConvParams {
    pub fn init(rng: &mut impl Rng, relations: usize, f_in: usize, f_out: usize) -> Self {
        let mut taps = Array3::zeros((relations + 1, f_in, f_out));
        for mut tap in taps.axis_iter_mut(Axis(0)) {
            tap.assign(&glorot(rng, f_in, f_out, (f_in, f_out)));
        }
        Self {
            taps,
            bias: Array1::zeros(f_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            taps: Array3::zeros(self.taps.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn relations(&self) -> usize {
        self.taps.dim().0 - 1
    }

    pub fn f_in(&self) -> usize {
        self.taps.dim().1
    }

    pub fn f_out(&self) -> usize {
        self.taps.dim().2
    }

    /// `v·T₀ + Σ_l (Â_l·v)·T_l + b`
    pub fn forward(&self, adj: &Relations, v: ArrayView2<f64>) -> Result<(Array2<f64>, GraphConvCache)> {
        if v.ncols() != self.f_in() || adj.l() != self.relations() || adj.n != v.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "graph_conv expects {} relations and width {}, got {} relations, {}x{} input over {} vertices",
                self.relations(),
                self.f_in(),
                adj.l(),
                v.nrows(),
                v.ncols(),
                adj.n
            )));
        }
        let mut out = v.dot(&self.taps.index_axis(Axis(0), 0));
        let mut aggregates = Vec::with_capacity(adj.l());
        for (l, rel) in adj.slices.iter().enumerate() {
            let agg = rel.mul(v);
            out += &agg.dot(&self.taps.index_axis(Axis(0), l + 1));
            aggregates.push(agg);
        }
        out += &self.bias;
        Ok((
            out,
            GraphConvCache {
                input: v.to_owned(),
                aggregates,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient and, when `want_adj`, the gradient of each relation slice.
    pub fn backward(
        &self,
        adj: &Relations,
        cache: &GraphConvCache,
        upstream: ArrayView2<f64>,
        grad: &mut GraphConvParams,
        want_adj: bool,
    ) -> (Array2<f64>, Option<Vec<Array2<f64>>>) {
        let v = &cache.input;
        let mut dv = upstream.dot(&self.taps.index_axis(Axis(0), 0).t());
        {
            let mut g0 = grad.taps.index_axis_mut(Axis(0), 0);
            g0 += &v.t().dot(&upstream);
        }
        let mut dadj = want_adj.then(Vec::new);
        for (l, rel) in adj.slices.iter().enumerate() {
            let tap = self.taps.index_axis(Axis(0), l + 1);
            let mut gl = grad.taps.index_axis_mut(Axis(0), l + 1);
            gl += &cache.aggregates[l].t().dot(&upstream);
            let back = upstream.dot(&tap.t());
            dv += &rel.tmul(back.view());
            if let Some(d) = dadj.as_mut() {
                d.push(back.dot(&v.t()));
            }
        }
        grad.bias += &upstream.sum_axis(Axis(0));
        (dv, dadj)
    }
}

/// Learned soft assignment of `n` vertices to `k` pooled vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedPoolParams {
    /// `[f_in, k]`
    pub w: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbedPoolCache {
    input: Array2<f64>,
    assign: Array2<f64>,
    /// `B_l·S` with `B_l = (Â_l + Â_lᵀ) / 2`.
    sym_assign: Vec<Array2<f64>>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut s = z.clone();
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    s
}

impl EmbedPoolParams {
    pub fn init(rng: &mut impl Rng, f_in: usize, k: usize) -> Self {
        Self {
            w: glorot(rng, f_in, k, (f_in, k)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
        }
    }

    pub fn f_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    /// Soft assignment `S = softmax_rows(v·W)`.
    pub fn assignment(&self, v: ArrayView2<f64>) -> Array2<f64> {
        softmax_rows(&v.dot(&self.w))
    }

    /// `v' = Sᵀ·v`, `Â'_l = Sᵀ·((Â_l + Â_lᵀ)/2)·S`.
    pub fn forward(
        &self,
        adj: &Relations,
        v: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Relations, EmbedPoolCache)> {
        if v.ncols() != self.f_in() || adj.n != v.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "embed_pool expects width {}, got {}x{} over {} vertices",
                self.f_in(),
                v.nrows(),
                v.ncols(),
                adj.n
            )));
        }
        if v.nrows() == 0 {
            return Err(Error::ShapeMismatch("embed_pool needs at least one vertex".into()));
        }
        let s = self.assignment(v);
        let pooled = s.t().dot(&v);
        let mut sym_assign = Vec::with_capacity(adj.l());
        let mut slices = Vec::with_capacity(adj.l());
        for rel in &adj.slices {
            let mut bs = rel.mul(s.view());
            bs += &rel.tmul(s.view());
            bs *= 0.5;
            slices.push(Relation::Dense(s.t().dot(&bs)));
            sym_assign.push(bs);
        }
        let cache = EmbedPoolCache {
            input: v.to_owned(),
            assign: s,
            sym_assign,
        };
        Ok((
            pooled,
            Relations {
                n: self.k(),
                slices,
            },
            cache,
        ))
    }

    /// `upstream_adj` is the gradient w.r.t. the pooled slices, if any
    /// downstream layer used them. Returns the input feature gradient and,
    /// when `adj_in` is given and `want_adj`, the gradient of each input slice.
    pub fn backward(
        &self,
        cache: &EmbedPoolCache,
        upstream: ArrayView2<f64>,
        upstream_adj: Option<&[Array2<f64>]>,
        grad: &mut EmbedPoolParams,
        want_adj: bool,
    ) -> (Array2<f64>, Option<Vec<Array2<f64>>>) {
        let v = &cache.input;
        let s = &cache.assign;
        let mut ds = v.dot(&upstream.t());
        let mut dadj = None;
        if let Some(ga) = upstream_adj {
            let mut d = Vec::with_capacity(ga.len());
            for (g, bs) in ga.iter().zip(&cache.sym_assign) {
                let g_sym = g + &g.t();
                ds += &bs.dot(&g_sym);
                if want_adj {
                    let db = s.dot(g).dot(&s.t());
                    d.push((&db + &db.t()) * 0.5);
                }
            }
            if want_adj {
                dadj = Some(d);
            }
        }
        // Softmax Jacobian, row by row.
        let mut dz = ds;
        Zip::from(dz.rows_mut()).and(s.rows()).for_each(|mut dzr, sr| {
            let inner: f64 = dzr.iter().zip(sr.iter()).map(|(a, b)| a * b).sum();
            dzr.zip_mut_with(&sr, |d, &p| *d = p * (*d - inner));
        });
        grad.w += &v.t().dot(&dz);
        let mut dv = s.dot(&upstream);
        dv += &dz.dot(&self.w.t());
        (dv, dadj)
    }
}

/// Fully connected layer on a single row vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[d_in, d_out]`
    pub w: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseParams {
    pub fn init(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        Self {
            w: glorot(rng, d_in, d_out, (d_in, d_out)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "dense expects width {}, got {}",
                self.d_in(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w) + &self.bias)
    }

    pub fn backward(&self, x: ArrayView2<f64>, upstream: ArrayView2<f64>, grad: &mut DenseParams) -> Array2<f64> {
        grad.w += &x.t().dot(&upstream);
        grad.bias += &upstream.sum_axis(Axis(0));
        upstream.dot(&self.w.t())
    }
}
