//! Dense tensors and a symbolic reverse-mode differentiation core.
//!
//! Graphs are immutable [`Expr`] DAGs. [`grad`] returns another graph, so
//! gradients can be differentiated again; [`Program`] evaluates a graph
//! against [`Bindings`] in a per-call workspace.

mod check;
mod eval;
mod expr;
mod grad;
mod kernels;
mod mlp;
mod scalar;
mod sparse;
mod tensor;

use thiserror::Error;

pub use check::{check_gradient, jacobian, relative_error, GradCheckReport};
pub use eval::{forward, Bindings, Program};
pub use expr::{Expr, NodeId, Unary};
pub use grad::{grad, grads, grads_or_zero};
pub use mlp::{Activation, Binder, Layer, MlpParams, MlpVars};
pub use scalar::Real;
pub use sparse::{Csr, SparseOp};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite value produced by node #{node} ({op})")]
    NonFiniteNode { node: NodeId, op: &'static str },
    #[error("unbound leaf {0}")]
    Unbound(String),
    #[error("gradient needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("leaf not in graph: {0}")]
    NotInGraph(String),
    #[error("nonpositive step")]
    NonPositiveStep,
    #[error("singular system in batch element {batch}")]
    Singular { batch: usize },
    #[error("matrix solve failed at node #{node}: {source}")]
    SolveFailed {
        node: NodeId,
        #[source]
        source: Box<EngineError>,
    },
}
