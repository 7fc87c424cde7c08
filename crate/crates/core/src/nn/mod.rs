//! Minimal dense-network engine shared by every learning agent.

pub mod checkpoint;
mod loss;
mod matrix;
mod mlp;
mod optim;

pub use loss::{
    accuracy, argmax_rows, cross_entropy_rows, loss_eval, one_hot, LossKind, PROB_FLOOR,
};
pub use matrix::Matrix;
pub use mlp::{softmax_in_place, Activation, ForwardCache, GradientAt, GradientSet, Mlp};
pub use optim::{sgd_step, OptimizerState};
