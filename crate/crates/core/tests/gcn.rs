mod common;

use common::*;
use histograph::gcn::{
    backward, forward_cached, model_forward, Architecture, DenseParams, EmbedPoolParams,
    GraphConvParams, GraphInput, Layer, ModelParams,
};
use histograph::histograph::AdjacencyTensor;
use ndarray::Axis;

#[test]
fn default_architecture_gradients_match_finite_differences() {
    let g = random_graph(6, 54, 150, 1);
    let m = ModelParams::init(&Architecture::default(), 54, 2, 7).unwrap();
    for (name, rel, scale) in gradient_check(&g, &m, 1, 1e-5) {
        println!("{name}: rel {rel:.2e} (max |g| {scale:.2e})");
        assert!(rel < 1e-5, "{name}: {rel}");
    }
}

#[test]
fn conv_after_pool_gradients_match_finite_differences() {
    // Exercises gradients flowing through the pooled adjacency:
    // conv(5->4) relu pool(3) conv(4->4) relu pool(2) dense(8->3)
    let mut r = rand_chacha::ChaCha8Rng::from_seed_u64(5);
    let layers = vec![
        Layer::GraphConv(GraphConvParams::init(&mut r, 1, 5, 4)),
        Layer::Relu,
        Layer::EmbedPool(EmbedPoolParams::init(&mut r, 4, 3)),
        Layer::GraphConv(GraphConvParams::init(&mut r, 1, 4, 4)),
        Layer::Relu,
        Layer::EmbedPool(EmbedPoolParams::init(&mut r, 4, 2)),
        Layer::Dense(DenseParams::init(&mut r, 8, 3)),
    ];
    let m = ModelParams::new(layers, 5, 3).unwrap();
    let g = random_graph(7, 5, 150, 4);
    for (name, rel, _) in gradient_check(&g, &m, 2, 1e-5) {
        assert!(rel < 1e-5, "{name}: {rel}");
    }
}

trait SeedU64 {
    fn from_seed_u64(seed: u64) -> Self;
}
impl SeedU64 for rand_chacha::ChaCha8Rng {
    fn from_seed_u64(seed: u64) -> Self {
        rand::SeedableRng::seed_from_u64(seed)
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let g = random_graph(6, 54, 150, 2);
    let m = ModelParams::init(&Architecture::default(), 54, 2, 1).unwrap();
    let (_, cache) = forward_cached(&GraphInput::from_histograph(&g), &m).unwrap();
    let grads = backward(&m, &cache, &[0.0, 0.0]).unwrap();
    assert!(grads.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
    assert!(backward(&m, &cache, &[0.0]).is_err());
}

#[test]
fn final_bias_gradient_equals_upstream() {
    let g = random_graph(6, 54, 150, 3);
    let m = ModelParams::init(&Architecture::default(), 54, 2, 1).unwrap();
    let (_, cache) = forward_cached(&GraphInput::from_histograph(&g), &m).unwrap();
    let upstream = [0.3, -0.7];
    let grads = backward(&m, &cache, &upstream).unwrap();
    let last = grads.tensors().last().unwrap().to_vec();
    assert_eq!(last, upstream.to_vec());
}

#[test]
fn single_vertex_and_mixed_sizes() {
    let m = ModelParams::init(&Architecture::default(), 54, 2, 1).unwrap();
    for n in [1, 3, 40, 150] {
        let logits = model_forward(&random_graph(n, 54, 400, n as u64), &m).unwrap();
        assert_eq!(logits.len(), 2);
        assert!(logits.iter().all(|v| v.is_finite()));
    }
    assert!(model_forward(&random_graph(4, 60, 100, 0), &m).is_err());
}

#[test]
fn graph_conv_is_permutation_equivariant() {
    for seed in 0..20 {
        let g = random_graph(5, 6, 150, seed);
        let perm = random_permutation(5, seed + 100);
        let pg = g.permuted(&perm);
        let mut r = rand_chacha::ChaCha8Rng::from_seed_u64(seed);
        let conv = GraphConvParams::init(&mut r, 1, 6, 3);
        let a = GraphInput::from_histograph(&g);
        let b = GraphInput::from_histograph(&pg);
        let (oa, _) = conv.forward(&a.relations, a.features.view()).unwrap();
        let (ob, _) = conv.forward(&b.relations, b.features.view()).unwrap();
        let oa_perm = oa.select(Axis(0), &perm);
        assert!(max_abs_diff(oa_perm.as_slice().unwrap(), ob.as_slice().unwrap()) < 1e-9);
    }
}

#[test]
fn embed_pool_is_permutation_invariant() {
    for seed in 0..20 {
        let g = random_graph(5, 6, 150, seed);
        let perm = random_permutation(5, seed + 7);
        let mut r = rand_chacha::ChaCha8Rng::from_seed_u64(seed);
        let pool = EmbedPoolParams::init(&mut r, 6, 3);
        let a = GraphInput::from_histograph(&g);
        let b = GraphInput::from_histograph(&g.permuted(&perm));
        let (va, aa, _) = pool.forward(&a.relations, a.features.view()).unwrap();
        let (vb, ab, _) = pool.forward(&b.relations, b.features.view()).unwrap();
        assert!(max_abs_diff(va.as_slice().unwrap(), vb.as_slice().unwrap()) < 1e-9);
        let (da, db) = (aa.slices[0].to_dense(), ab.slices[0].to_dense());
        assert!(max_abs_diff(da.as_slice().unwrap(), db.as_slice().unwrap()) < 1e-9);
        // Symmetric pooled adjacency, stochastic assignment rows.
        assert!(da.iter().zip(da.t().iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        for row in pool.assignment(a.features.view()).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn logits_finite_over_many_seeds() {
    let g = random_graph(30, 54, 300, 9);
    for seed in 0..1000 {
        let m = ModelParams::init(&Architecture::default(), 54, 2, seed).unwrap();
        assert!(model_forward(&g, &m).unwrap().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn isolated_graph_has_zero_normalized_adjacency() {
    let a = AdjacencyTensor::zeros(3, 1);
    let n = histograph::gcn::normalize_adjacency(&a);
    assert!(n.weights().iter().all(|&v| v == 0.0));
}
