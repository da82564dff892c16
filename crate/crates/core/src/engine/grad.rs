//! Symbolic reverse-mode differentiation.
//!
//! The backward pass does not produce numbers: it emits new graph nodes
//! built from the same op set, so a gradient is an ordinary [`Expr`] that
//! can be evaluated, combined, or differentiated again.

use std::collections::{HashMap, HashSet};

use super::expr::{Op, Unary};
use super::{EngineError, Expr, NodeId, Real};

/// Nodes reachable from `roots`, inputs before users.
pub(crate) fn topo_order<T: Real>(roots: &[Expr<T>]) -> Vec<Expr<T>> {
    let mut order = Vec::new();
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut stack: Vec<(Expr<T>, usize)> = Vec::new();
    for root in roots {
        if !seen.insert(root.id()) {
            continue;
        }
        stack.push((root.clone(), 0));
        while let Some((node, next)) = stack.pop() {
            if next < node.0.inputs.len() {
                let child = node.0.inputs[next].clone();
                stack.push((node, next + 1));
                if seen.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }
    }
    order
}

/// `df/dx` for scalar `f`, as an expression of the same shape as `x`.
pub fn grad<T: Real>(f: &Expr<T>, x: &Expr<T>) -> Result<Expr<T>, EngineError> {
    Ok(grads(f, std::slice::from_ref(x))?.remove(0))
}

/// Gradients of scalar `f` with respect to every expression in `wrt`, from one
/// backward sweep. Each `wrt` entry is treated as an independent variable:
/// only paths that pass through it count.
pub fn grads<T: Real>(f: &Expr<T>, wrt: &[Expr<T>]) -> Result<Vec<Expr<T>>, EngineError> {
    if !f.shape().is_empty() {
        return Err(EngineError::NonScalar(f.shape().to_vec()));
    }
    let order = topo_order(std::slice::from_ref(f));
    let position: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
    for x in wrt {
        if !position.contains_key(&x.id()) {
            return Err(EngineError::NotInGraph(format!("{x:?}")));
        }
    }
    let targets: HashSet<NodeId> = wrt.iter().map(Expr::id).collect();

    let mut depends = vec![false; order.len()];
    for (i, node) in order.iter().enumerate() {
        depends[i] = targets.contains(&node.id()) || node.0.inputs.iter().any(|inp| depends[position[&inp.id()]]);
    }

    let mut adjoint: Vec<Option<Expr<T>>> = vec![None; order.len()];
    let root = order.len() - 1;
    adjoint[root] = Some(Expr::scalar(T::one()));

    for i in (0..order.len()).rev() {
        let Some(g) = adjoint[i].take() else { continue };
        let node = &order[i];
        let needed: Vec<bool> = node.0.inputs.iter().map(|inp| depends[position[&inp.id()]]).collect();
        if needed.iter().any(|&b| b) {
            let contributions = vjp(node, &g, &needed);
            for ((inp, contrib), &need) in node.0.inputs.iter().zip(contributions).zip(&needed) {
                if let (Some(c), true) = (contrib, need) {
                    let slot = &mut adjoint[position[&inp.id()]];
                    *slot = Some(match slot.take() {
                        Some(acc) => acc.add(&c),
                        None => c,
                    });
                }
            }
        }
        adjoint[i] = Some(g);
    }

    Ok(wrt
        .iter()
        .map(|x| {
            adjoint[position[&x.id()]]
                .clone()
                .unwrap_or_else(|| Expr::zeros(x.shape()))
        })
        .collect())
}

/// Like [`grads`], but a `wrt` entry the graph never reaches gets a zero
/// gradient instead of an error.
pub fn grads_or_zero<T: Real>(f: &Expr<T>, wrt: &[Expr<T>]) -> Result<Vec<Expr<T>>, EngineError> {
    let reachable: HashSet<NodeId> = topo_order(std::slice::from_ref(f)).iter().map(Expr::id).collect();
    let present: Vec<Expr<T>> = wrt.iter().filter(|x| reachable.contains(&x.id())).cloned().collect();
    let mut found = grads(f, &present)?.into_iter();
    Ok(wrt
        .iter()
        .map(|x| {
            if reachable.contains(&x.id()) {
                found.next().expect("one gradient per reachable entry")
            } else {
                Expr::zeros(x.shape())
            }
        })
        .collect())
}

/// Derivative of an elementwise function at `x` (whose image is `y`), or
/// `None` where it vanishes identically.
fn unary_derivative<T: Real>(f: Unary, x: &Expr<T>, y: &Expr<T>) -> Option<Expr<T>> {
    Some(match f {
        Unary::Tanh => y.square().neg().offset(T::one()),
        Unary::Sigmoid => y.mul(&y.neg().offset(T::one())),
        Unary::Sin => x.cos(),
        Unary::Cos => x.sin().neg(),
        Unary::Exp => y.clone(),
        Unary::Softplus => x.sigmoid(),
        Unary::Relu => x.unary(Unary::Step),
        Unary::Rehu => x.unary(Unary::Ramp),
        Unary::Ramp => x.unary(Unary::Window),
        Unary::Step | Unary::Window => return None,
        Unary::Kappa(k) => x.unary(Unary::Kappa(k.saturating_add(1))),
    })
}

/// Vector-Jacobian products of one node for the inputs flagged in `needed`.
fn vjp<T: Real>(node: &Expr<T>, g: &Expr<T>, needed: &[bool]) -> Vec<Option<Expr<T>>> {
    let inp = &node.0.inputs;
    let want = |k: usize| needed.get(k).copied().unwrap_or(false);
    let one = |e: Expr<T>| vec![Some(e)];
    match &node.0.op {
        Op::Leaf(_) | Op::Constant(_) => Vec::new(),
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), want(1).then(|| g.neg())],
        Op::Mul => vec![want(0).then(|| g.mul(&inp[1])), want(1).then(|| g.mul(&inp[0]))],
        Op::Neg => one(g.neg()),
        Op::Scale(c) => one(g.scale(*c)),
        Op::Offset(_) => one(g.clone()),
        Op::Unary(f) => vec![unary_derivative(*f, &inp[0], node).map(|d| g.mul(&d))],
        Op::Sum => one(g.fill(inp[0].shape())),
        Op::Fill => one(g.sum()),
        Op::MatMul => vec![
            want(0).then(|| g.matmul(&inp[1].t())),
            want(1).then(|| inp[0].t().matmul(g)),
        ],
        Op::Transpose => one(g.t()),
        Op::BroadcastRows => one(g.sum_rows()),
        Op::SumRows => one(g.broadcast_rows(inp[0].shape()[0])),
        Op::BroadcastCols => one(g.sum_cols()),
        Op::SumCols => one(g.broadcast_cols(inp[0].shape()[1])),
        Op::Reshape => one(g.reshape(inp[0].shape())),
        Op::SliceCols(start) => one(g.pad_cols(*start, inp[0].shape()[1])),
        Op::PadCols(start) => one(g.slice_cols(*start, inp[0].shape()[1])),
        Op::Concat => {
            let a = inp[0].shape()[1];
            let b = inp[1].shape()[1];
            vec![want(0).then(|| g.slice_cols(0, a)), want(1).then(|| g.slice_cols(a, b))]
        }
        Op::Gather(idx) => one(g.scatter_rows(idx.clone(), inp[0].shape()[0])),
        Op::Scatter(idx) => one(g.gather_rows(idx.clone())),
        Op::SpMM(op) => one(g.spmm(&op.transposed())),
        Op::Stack => (0..inp.len()).map(|k| want(k).then(|| g.select(k))).collect(),
        Op::Select(k) => one(g.embed(*k, inp[0].shape()[1])),
        Op::Embed(k) => one(g.select(*k)),
        Op::BatchTranspose => one(g.batch_t()),
        Op::BatchMatVec => vec![
            want(0).then(|| g.batch_outer(&inp[1])),
            want(1).then(|| inp[0].batch_t().batch_matvec(g)),
        ],
        Op::BatchOuter => vec![
            want(0).then(|| g.batch_matvec(&inp[1])),
            want(1).then(|| g.batch_t().batch_matvec(&inp[0])),
        ],
        Op::BatchSolve => {
            // x = A^-1 b:  b_bar = A^-T g,  A_bar = -b_bar x^T
            let b_bar = inp[0].batch_t().batch_solve(g);
            let a_bar = want(0).then(|| b_bar.batch_outer(node).neg());
            vec![a_bar, want(1).then_some(b_bar)]
        }
        Op::LogSumExpRows => {
            let cols = inp[0].shape()[1];
            one(inp[0].softmax_rows().mul(&g.broadcast_cols(cols)))
        }
        Op::SoftmaxRows => {
            let cols = node.shape()[1];
            let sg = node.mul(g);
            one(sg.sub(&node.mul(&sg.sum_cols().broadcast_cols(cols))))
        }
    }
}
