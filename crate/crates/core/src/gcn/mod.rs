//! Spatial graph convolution and graph embed pooling with hand-derived
//! backward passes, composed into a whole-graph classifier.

mod checkpoint;
mod layers;
mod loss;
mod model;
mod relations;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use layers::{softmax_rows, DenseParams, EmbedPoolParams, GraphConvParams};
pub use loss::softmax_cross_entropy;
pub use model::{
    argmax, backward, forward, forward_cached, model_backward, model_forward, Architecture,
    ForwardCache, Gradients, GraphInput, Layer, ModelParams,
};
pub use relations::{normalize_adjacency, Csr, Relation, Relations};
