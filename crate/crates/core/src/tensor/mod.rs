//! Reverse-mode differentiation, parameter storage, Adam, gradient checking
//! and checkpoint IO shared by the reward model and the policy.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;

pub use adam::{adam_step, Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Meta, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, CoordCheck, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Matrix, RowTerm, Var};
pub use params::{Param, ParamGrads, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("non-finite value entering {0}")]
    NonFiniteInput(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("index {index} out of range {bound} in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("{0} of an empty input")]
    Empty(&'static str),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
