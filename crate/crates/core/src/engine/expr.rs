use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::sparse::SparseOp;
use super::{Real, Tensor};

pub type NodeId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> NodeId {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Elementwise functions. Each one's derivative is again an elementwise
/// function (or identically zero), which closes the op set under
/// differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Sin,
    Cos,
    Exp,
    Softplus,
    Relu,
    /// Heaviside step, 1 for x > 0.
    Step,
    /// Rectified Huber: 0 for x <= 0, x^2/2 on (0, 1), x - 1/2 for x >= 1.
    Rehu,
    /// clamp(x, 0, 1), the derivative of `Rehu`.
    Ramp,
    /// Indicator of the open interval (0, 1), the derivative of `Ramp`.
    Window,
    /// `Kappa(0)` is 0.5x^2 for x >= 0 and exp(x) - 1 below; `Kappa(k)` is
    /// its k-th derivative with the right branch taken at exactly 0.
    Kappa(u8),
}

impl Unary {
    pub fn apply<T: Real>(self, x: T) -> T {
        let zero = T::zero();
        let one = T::one();
        let half = T::lit(0.5);
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Softplus => {
                // log(1 + e^x) without overflow
                if x > zero {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Unary::Relu => x.max(zero),
            Unary::Step => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Unary::Rehu => {
                if x <= zero {
                    zero
                } else if x < one {
                    half * x * x
                } else {
                    x - half
                }
            }
            Unary::Ramp => x.max(zero).min(one),
            Unary::Window => {
                if x > zero && x < one {
                    one
                } else {
                    zero
                }
            }
            Unary::Kappa(order) => {
                if x >= zero {
                    match order {
                        0 => half * x * x,
                        1 => x,
                        2 => one,
                        _ => zero,
                    }
                } else if order == 0 {
                    x.exp_m1()
                } else {
                    x.exp()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Exp => "exp",
            Unary::Softplus => "softplus",
            Unary::Relu => "relu",
            Unary::Step => "step",
            Unary::Rehu => "rehu",
            Unary::Ramp => "ramp",
            Unary::Window => "window",
            Unary::Kappa(_) => "kappa",
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

#[derive(Clone)]
pub(crate) enum Op<T> {
    Leaf(String),
    Constant(Arc<Tensor<T>>),
    Add,
    Sub,
    Mul,
    Neg,
    Scale(T),
    Offset(T),
    Unary(Unary),
    Sum,
    Fill,
    MatMul,
    Transpose,
    BroadcastRows,
    SumRows,
    BroadcastCols,
    SumCols,
    Reshape,
    SliceCols(usize),
    PadCols(usize),
    Concat,
    Gather(Arc<Vec<usize>>),
    Scatter(Arc<Vec<usize>>),
    SpMM(SparseOp<T>),
    Stack,
    Select(usize),
    Embed(usize),
    BatchTranspose,
    BatchMatVec,
    BatchOuter,
    BatchSolve,
    LogSumExpRows,
    SoftmaxRows,
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "negate",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Unary(u) => u.name(),
            Op::Sum => "sum",
            Op::Fill => "fill",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::BroadcastRows => "broadcast_rows",
            Op::SumRows => "sum_rows",
            Op::BroadcastCols => "broadcast_cols",
            Op::SumCols => "sum_cols",
            Op::Reshape => "reshape",
            Op::SliceCols(_) => "slice",
            Op::PadCols(_) => "pad",
            Op::Concat => "concat",
            Op::Gather(_) => "gather",
            Op::Scatter(_) => "scatter",
            Op::SpMM(_) => "spmm",
            Op::Stack => "stack",
            Op::Select(_) => "select",
            Op::Embed(_) => "embed",
            Op::BatchTranspose => "batch_transpose",
            Op::BatchMatVec => "batch_matvec",
            Op::BatchOuter => "batch_outer",
            Op::BatchSolve => "batch_solve",
            Op::LogSumExpRows => "logsumexp",
            Op::SoftmaxRows => "softmax",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) id: NodeId,
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<Expr<T>>,
    pub(crate) shape: Vec<usize>,
}

/// Handle to a node of an immutable expression graph.
///
/// Builders infer the output shape eagerly and panic on inconsistent
/// shapes, the same way dense array libraries do for mismatched
/// arithmetic. Values only exist once a graph is evaluated against
/// [`Bindings`](super::Bindings).
pub struct Expr<T>(pub(crate) Arc<Node<T>>);

impl<T> Clone for Expr<T> {
    fn clone(&self) -> Self {
        Expr(Arc::clone(&self.0))
    }
}

impl<T> fmt::Debug for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.op {
            Op::Leaf(name) => write!(f, "Leaf({name}#{}{:?})", self.0.id, self.0.shape),
            op => write!(f, "{}#{}{:?}", op.name(), self.0.id, self.0.shape),
        }
    }
}

impl<T: Real> Expr<T> {
    pub(crate) fn make(op: Op<T>, inputs: Vec<Expr<T>>, shape: Vec<usize>) -> Self {
        Expr(Arc::new(Node {
            id: fresh_id(),
            op,
            inputs,
            shape,
        }))
    }

    /// A named placeholder whose value is supplied at evaluation time.
    pub fn leaf(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::make(Op::Leaf(name.into()), Vec::new(), shape.to_vec())
    }

    pub fn constant(t: Tensor<T>) -> Self {
        let shape = t.shape().to_vec();
        Self::make(Op::Constant(Arc::new(t)), Vec::new(), shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(Tensor::zeros(shape))
    }

    pub fn id(&self) -> NodeId {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op.name()
    }

    pub fn leaf_name(&self) -> Option<&str> {
        match &self.0.op {
            Op::Leaf(name) => Some(name),
            _ => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf(_))
    }

    /// Value of a constant node, if this is one.
    pub fn constant_value(&self) -> Option<&Tensor<T>> {
        match &self.0.op {
            Op::Constant(t) => Some(t),
            _ => None,
        }
    }

    fn same_shape(&self, other: &Self, what: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{what}: shape mismatch {:?} vs {:?}",
            self,
            other
        );
    }

    fn rank2(&self, what: &str) -> (usize, usize) {
        assert_eq!(self.shape().len(), 2, "{what} needs a matrix, got {:?}", self);
        (self.shape()[0], self.shape()[1])
    }

    fn rank3(&self, what: &str) -> (usize, usize, usize) {
        assert_eq!(self.shape().len(), 3, "{what} needs a rank-3 batch, got {:?}", self);
        (self.shape()[0], self.shape()[1], self.shape()[2])
    }

    pub fn add(&self, other: &Self) -> Self {
        self.same_shape(other, "add");
        Self::make(Op::Add, vec![self.clone(), other.clone()], self.shape().to_vec())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.same_shape(other, "sub");
        Self::make(Op::Sub, vec![self.clone(), other.clone()], self.shape().to_vec())
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Self {
        self.same_shape(other, "mul");
        Self::make(Op::Mul, vec![self.clone(), other.clone()], self.shape().to_vec())
    }

    pub fn neg(&self) -> Self {
        Self::make(Op::Neg, vec![self.clone()], self.shape().to_vec())
    }

    pub fn scale(&self, c: T) -> Self {
        Self::make(Op::Scale(c), vec![self.clone()], self.shape().to_vec())
    }

    /// Adds a constant to every entry.
    pub fn offset(&self, c: T) -> Self {
        Self::make(Op::Offset(c), vec![self.clone()], self.shape().to_vec())
    }

    pub fn unary(&self, f: Unary) -> Self {
        Self::make(Op::Unary(f), vec![self.clone()], self.shape().to_vec())
    }

    pub fn tanh(&self) -> Self {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(Unary::Sigmoid)
    }

    pub fn sin(&self) -> Self {
        self.unary(Unary::Sin)
    }

    pub fn cos(&self) -> Self {
        self.unary(Unary::Cos)
    }

    pub fn exp(&self) -> Self {
        self.unary(Unary::Exp)
    }

    pub fn softplus(&self) -> Self {
        self.unary(Unary::Softplus)
    }

    pub fn relu(&self) -> Self {
        self.unary(Unary::Relu)
    }

    pub fn rehu(&self) -> Self {
        self.unary(Unary::Rehu)
    }

    pub fn kappa(&self) -> Self {
        self.unary(Unary::Kappa(0))
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    /// Sum of all entries, a scalar.
    pub fn sum(&self) -> Self {
        Self::make(Op::Sum, vec![self.clone()], Vec::new())
    }

    /// Inner product of two same-shape tensors, a scalar.
    pub fn dot(&self, other: &Self) -> Self {
        self.mul(other).sum()
    }

    /// Broadcasts a scalar to `shape`.
    pub fn fill(&self, shape: &[usize]) -> Self {
        assert!(self.shape().is_empty(), "fill needs a scalar, got {:?}", self);
        Self::make(Op::Fill, vec![self.clone()], shape.to_vec())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let (n, k) = self.rank2("matmul");
        let (k2, m) = other.rank2("matmul");
        assert_eq!(k, k2, "matmul inner dimensions: {:?} x {:?}", self, other);
        Self::make(Op::MatMul, vec![self.clone(), other.clone()], vec![n, m])
    }

    pub fn t(&self) -> Self {
        let (n, m) = self.rank2("transpose");
        Self::make(Op::Transpose, vec![self.clone()], vec![m, n])
    }

    /// Repeats a vector `[m]` as each of `rows` rows.
    pub fn broadcast_rows(&self, rows: usize) -> Self {
        assert_eq!(self.shape().len(), 1, "broadcast_rows needs a vector, got {:?}", self);
        Self::make(Op::BroadcastRows, vec![self.clone()], vec![rows, self.shape()[0]])
    }

    /// Column sums `[n, m] -> [m]`.
    pub fn sum_rows(&self) -> Self {
        let (_, m) = self.rank2("sum_rows");
        Self::make(Op::SumRows, vec![self.clone()], vec![m])
    }

    /// Repeats a vector `[n]` as each of `cols` columns.
    pub fn broadcast_cols(&self, cols: usize) -> Self {
        assert_eq!(self.shape().len(), 1, "broadcast_cols needs a vector, got {:?}", self);
        Self::make(Op::BroadcastCols, vec![self.clone()], vec![self.shape()[0], cols])
    }

    /// Row sums `[n, m] -> [n]`.
    pub fn sum_cols(&self) -> Self {
        let (n, _) = self.rank2("sum_cols");
        Self::make(Op::SumCols, vec![self.clone()], vec![n])
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&self, bias: &Self) -> Self {
        let (n, _) = self.rank2("add_row");
        self.add(&bias.broadcast_rows(n))
    }

    /// `self . weight + bias`, rowwise.
    pub fn affine(&self, weight: &Self, bias: &Self) -> Self {
        self.matmul(weight).add_row(bias)
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.shape().iter().product::<usize>(),
            "reshape {:?} into {:?}",
            self,
            shape
        );
        Self::make(Op::Reshape, vec![self.clone()], shape.to_vec())
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        let (n, m) = self.rank2("slice_cols");
        assert!(start + len <= m, "slice {start}..{} of {:?}", start + len, self);
        Self::make(Op::SliceCols(start), vec![self.clone()], vec![n, len])
    }

    /// Embeds columns into a zero matrix of width `total` at offset `start`.
    pub fn pad_cols(&self, start: usize, total: usize) -> Self {
        let (n, m) = self.rank2("pad_cols");
        assert!(start + m <= total, "pad {:?} at {start} into width {total}", self);
        Self::make(Op::PadCols(start), vec![self.clone()], vec![n, total])
    }

    pub fn concat_cols(&self, other: &Self) -> Self {
        let (n, a) = self.rank2("concat");
        let (n2, b) = other.rank2("concat");
        assert_eq!(n, n2, "concat rows: {:?} vs {:?}", self, other);
        Self::make(Op::Concat, vec![self.clone(), other.clone()], vec![n, a + b])
    }

    /// Rows `idx[i]` of a matrix.
    pub fn gather_rows(&self, idx: Arc<Vec<usize>>) -> Self {
        let (n, m) = self.rank2("gather_rows");
        assert!(idx.iter().all(|&i| i < n), "gather index out of range for {:?}", self);
        let len = idx.len();
        Self::make(Op::Gather(idx), vec![self.clone()], vec![len, m])
    }

    /// Adjoint of gather: row i is added into row `idx[i]` of a `rows`-row zero matrix.
    pub fn scatter_rows(&self, idx: Arc<Vec<usize>>, rows: usize) -> Self {
        let (n, m) = self.rank2("scatter_rows");
        assert_eq!(idx.len(), n, "scatter index length");
        assert!(idx.iter().all(|&i| i < rows), "scatter index out of range");
        Self::make(Op::Scatter(idx), vec![self.clone()], vec![rows, m])
    }

    /// Constant sparse matrix times `self`.
    pub fn spmm(&self, op: &SparseOp<T>) -> Self {
        let (n, m) = self.rank2("spmm");
        assert_eq!(
            op.cols(),
            n,
            "spmm: sparse {}x{} times {:?}",
            op.rows(),
            op.cols(),
            self
        );
        Self::make(Op::SpMM(op.clone()), vec![self.clone()], vec![op.rows(), m])
    }

    /// Stacks `k` matrices `[n, m]` into a batch `[n, k, m]`.
    pub fn stack(parts: &[Self]) -> Self {
        assert!(!parts.is_empty(), "stack of nothing");
        let (n, m) = parts[0].rank2("stack");
        for p in parts {
            assert_eq!(p.shape(), [n, m], "stack: ragged parts");
        }
        Self::make(Op::Stack, parts.to_vec(), vec![n, parts.len(), m])
    }

    /// Slot `k` of a batch `[n, K, m] -> [n, m]`.
    pub fn select(&self, k: usize) -> Self {
        let (n, kk, m) = self.rank3("select");
        assert!(k < kk);
        Self::make(Op::Select(k), vec![self.clone()], vec![n, m])
    }

    /// Places `[n, m]` into slot `k` of a zero batch `[n, total, m]`.
    pub fn embed(&self, k: usize, total: usize) -> Self {
        let (n, m) = self.rank2("embed");
        assert!(k < total);
        Self::make(Op::Embed(k), vec![self.clone()], vec![n, total, m])
    }

    /// Transposes each matrix of a batch.
    pub fn batch_t(&self) -> Self {
        let (n, a, b) = self.rank3("batch_t");
        Self::make(Op::BatchTranspose, vec![self.clone()], vec![n, b, a])
    }

    /// `[n, a, b] x [n, b] -> [n, a]`.
    pub fn batch_matvec(&self, v: &Self) -> Self {
        let (n, a, b) = self.rank3("batch_matvec");
        assert_eq!(v.shape(), [n, b], "batch_matvec: {:?} x {:?}", self, v);
        Self::make(Op::BatchMatVec, vec![self.clone(), v.clone()], vec![n, a])
    }

    /// `[n, a] (x) [n, b] -> [n, a, b]`.
    pub fn batch_outer(&self, v: &Self) -> Self {
        let (n, a) = self.rank2("batch_outer");
        let (n2, b) = v.rank2("batch_outer");
        assert_eq!(n, n2);
        Self::make(Op::BatchOuter, vec![self.clone(), v.clone()], vec![n, a, b])
    }

    /// Solves `A_i x_i = b_i` for each batch element; `self` is `A`.
    pub fn batch_solve(&self, rhs: &Self) -> Self {
        let (n, a, b) = self.rank3("batch_solve");
        assert_eq!(a, b, "batch_solve needs square systems");
        assert_eq!(rhs.shape(), [n, a], "batch_solve rhs {:?}", rhs);
        Self::make(Op::BatchSolve, vec![self.clone(), rhs.clone()], vec![n, a])
    }

    /// `log sum_j exp(x_ij)` per row, max-shifted.
    pub fn logsumexp_rows(&self) -> Self {
        let (n, _) = self.rank2("logsumexp_rows");
        Self::make(Op::LogSumExpRows, vec![self.clone()], vec![n])
    }

    pub fn softmax_rows(&self) -> Self {
        self.rank2("softmax_rows");
        Self::make(Op::SoftmaxRows, vec![self.clone()], self.shape().to_vec())
    }
}
