use ndarray::{Array2, ArrayView2, Axis};

use crate::histograph::AdjacencyTensor;

/// Row-normalizes every slice: `Â[p,l,q] = A[p,l,q] / max(Σ_q A[p,l,q], 1e-12)`.
pub fn normalize_adjacency(a: &AdjacencyTensor) -> AdjacencyTensor {
    const EPS: f64 = 1e-12;
    let mut w = a.weights().clone();
    for mut row in w.axis_iter_mut(Axis(0)) {
        for mut slice_row in row.axis_iter_mut(Axis(0)) {
            let sum: f64 = slice_row.sum();
            let denom = sum.max(EPS);
            slice_row.mapv_inplace(|v| v / denom);
        }
    }
    AdjacencyTensor::new(w).expect("shape preserved")
}

/// Compressed sparse rows of one relation slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let n = m.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.rows() {
            for (q, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(q);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[p]..self.indptr[p + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    fn mul(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, v.ncols()));
        for (p, mut out_row) in out.rows_mut().into_iter().enumerate() {
            for (q, a) in self.row(p) {
                out_row.scaled_add(a, &v.row(q));
            }
        }
        out
    }

    fn tmul(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, v.ncols()));
        for p in 0..self.n {
            let vp = v.row(p);
            for (q, a) in self.row(p) {
                out.row_mut(q).scaled_add(a, &vp);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for p in 0..self.n {
            for (q, a) in self.row(p) {
                out[[p, q]] = a;
            }
        }
        out
    }
}

/// One relation slice in whichever storage suits it: sparse for input
/// graphs, dense for pooled graphs.
#[derive(Debug, Clone, PartialEq)]
pub enum Relation {
    Sparse(Csr),
    Dense(Array2<f64>),
}

impl Relation {
    /// `A · v`
    pub fn mul(&self, v: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Relation::Sparse(c) => c.mul(v),
            Relation::Dense(a) => a.dot(&v),
        }
    }

    /// `Aᵀ · v`
    pub fn tmul(&self, v: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Relation::Sparse(c) => c.tmul(v),
            Relation::Dense(a) => a.t().dot(&v),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Relation::Sparse(c) => c.to_dense(),
            Relation::Dense(a) => a.clone(),
        }
    }
}

/// The relation slices a graph layer aggregates over.
#[derive(Debug, Clone, PartialEq)]
pub struct Relations {
    pub n: usize,
    pub slices: Vec<Relation>,
}

impl Relations {
    /// Sparse view of an (already normalized) tensor.
    pub fn from_tensor(a: &AdjacencyTensor) -> Self {
        let slices = (0..a.l())
            .map(|l| {
                let view = a.weights().index_axis(Axis(1), l);
                Relation::Sparse(Csr::from_dense(view))
            })
            .collect();
        Self { n: a.n(), slices }
    }

    pub fn l(&self) -> usize {
        self.slices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn rows_normalized() {
        let mut w = Array3::zeros((3, 1, 3));
        w[[0, 0, 1]] = 0.5;
        w[[0, 0, 2]] = 0.5;
        w[[1, 0, 0]] = 2.0;
        w[[1, 0, 2]] = 6.0;
        let a = normalize_adjacency(&AdjacencyTensor::new(w).unwrap());
        let n = a.weights();
        assert_eq!((n[[0, 0, 1]], n[[0, 0, 2]]), (0.5, 0.5));
        assert_eq!((n[[1, 0, 0]], n[[1, 0, 2]]), (0.25, 0.75));
        assert!(n.index_axis(Axis(0), 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_matches_dense() {
        let a = array![[0.0, 0.3, 0.0], [0.1, 0.0, 0.9], [0.0, 0.2, 0.0]];
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let s = Relation::Sparse(Csr::from_dense(a.view()));
        let d = Relation::Dense(a.clone());
        let close = |a: Array2<f64>, b: Array2<f64>| (a - b).iter().all(|x| x.abs() < 1e-14);
        assert!(close(s.mul(v.view()), d.mul(v.view())));
        assert!(close(s.tmul(v.view()), d.tmul(v.view())));
        assert_eq!(s.to_dense(), a);
    }
}
