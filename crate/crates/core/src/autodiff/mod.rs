//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records operations eagerly; [`Graph::backward`] sweeps the
//! tape in reverse. Parameters live in a [`ParamStore`] and are borrowed by
//! the graph, so a forward pass never copies weights.

mod checkpoint;
mod graph;
pub mod gradcheck;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_params, save_params, Manifest, TensorEntry, MANIFEST_FILE, PARAMS_FILE};
pub use graph::{Gradients, Graph, Var};
pub(crate) use layers::check_rate;
pub use layers::{dropout, dropout_mask, Activation, BiLstm, Conv1d, Dense, Lstm, MultiHeadAttention};
pub use optim::{clip_global_norm, Adam, CosineSchedule};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
