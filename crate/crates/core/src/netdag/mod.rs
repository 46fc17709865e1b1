//! Fully connected networks shaped as arbitrary DAGs: evaluation,
//! backpropagation, training and model documents.

mod activation;
mod document;
mod graph;
mod loss;
mod propagate;
mod train;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use document::{from_document, load_model, save_model, to_document, FORMAT_VERSION};
pub use graph::{DagNetwork, Edge, EdgeId, Node, NodeId, Violation};
pub use loss::{accuracy, loss, loss_and_functional_gradient, LossKind};
pub use propagate::{backward, forward, forward_output_from, predict, ActivationCache, Backprop, EdgeGrad};
pub use train::{evaluate, train_epochs, train_epochs_with, uniform_layer, EpochStats, SgdConfig};
