//! Minimal differentiable compute layer used by the policy and discriminator
//! models: dense layers, masked softmax, scaled dot-product attention, an
//! LSTM cell and Adam, all in `f64` with deterministic reductions.

pub mod adam;
pub mod checks;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, grad_check_params, grad_check_params_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{attention, dense, softmax, Activation, Dense, LstmCell, Mlp};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("every softmax entry is masked")]
    AllMasked,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
