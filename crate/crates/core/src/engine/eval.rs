use std::collections::HashMap;

use super::expr::Op;
use super::grad::topo_order;
use super::kernels::eval_op;
use super::{EngineError, Expr, NodeId, Real, Tensor};

/// Values for the leaves of a graph, keyed by node identity.
#[derive(Clone, Debug, Default)]
pub struct Bindings<T> {
    values: HashMap<NodeId, Tensor<T>>,
}

impl<T: Real> Bindings<T> {
    pub fn new() -> Self {
        Self { values: HashMap::new() }
    }

    pub fn bind(&mut self, leaf: &Expr<T>, value: Tensor<T>) -> &mut Self {
        self.values.insert(leaf.id(), value);
        self
    }

    pub fn with(mut self, leaf: &Expr<T>, value: Tensor<T>) -> Self {
        self.bind(leaf, value);
        self
    }

    pub fn get(&self, leaf: &Expr<T>) -> Option<&Tensor<T>> {
        self.values.get(&leaf.id())
    }

    pub(crate) fn by_id(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(&id)
    }
}

/// A graph flattened into execution order. Immutable and shareable; every
/// [`Program::run`] allocates its own workspace.
pub struct Program<T> {
    nodes: Vec<Expr<T>>,
    inputs: Vec<Vec<usize>>,
    outputs: Vec<usize>,
    last_use: Vec<usize>,
}

enum Slot<'a, T> {
    Empty,
    Borrowed(&'a Tensor<T>),
    Owned(Tensor<T>),
}

impl<T> Slot<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Slot::Borrowed(t) => t,
            Slot::Owned(t) => t,
            Slot::Empty => panic!("value freed before last use"),
        }
    }
}

impl<T: Real> Program<T> {
    pub fn new(outputs: &[Expr<T>]) -> Self {
        let nodes = topo_order(outputs);
        let position: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
        let inputs: Vec<Vec<usize>> = nodes
            .iter()
            .map(|n| n.0.inputs.iter().map(|i| position[&i.id()]).collect())
            .collect();
        let outputs: Vec<usize> = outputs.iter().map(|o| position[&o.id()]).collect();
        let mut last_use: Vec<usize> = (0..nodes.len()).collect();
        for (i, ins) in inputs.iter().enumerate() {
            for &j in ins {
                last_use[j] = last_use[j].max(i);
            }
        }
        for &o in &outputs {
            last_use[o] = usize::MAX;
        }
        Self {
            nodes,
            inputs,
            outputs,
            last_use,
        }
    }

    /// Number of nodes in the flattened graph.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaves that must be bound before running.
    pub fn leaves(&self) -> impl Iterator<Item = &Expr<T>> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn run(&self, bindings: &Bindings<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        let mut slots: Vec<Slot<'_, T>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let slot = match &node.0.op {
                Op::Leaf(name) => {
                    let value = bindings
                        .by_id(node.id())
                        .ok_or_else(|| EngineError::Unbound(format!("{name}#{}", node.id())))?;
                    if value.shape() != node.shape() {
                        return Err(EngineError::ShapeMismatch(format!(
                            "leaf {name} declared {:?}, bound {:?}",
                            node.shape(),
                            value.shape()
                        )));
                    }
                    Slot::Borrowed(value)
                }
                Op::Constant(t) => Slot::Borrowed(t.as_ref()),
                op => {
                    let args: Vec<&Tensor<T>> = self.inputs[i].iter().map(|&j| slots[j].get()).collect();
                    let value = eval_op(op, &args, node.shape()).map_err(|e| match e {
                        EngineError::Singular { .. } => EngineError::SolveFailed {
                            node: node.id(),
                            source: Box::new(e),
                        },
                        other => other,
                    })?;
                    if !value.is_finite() {
                        return Err(EngineError::NonFiniteNode {
                            node: node.id(),
                            op: op.name(),
                        });
                    }
                    Slot::Owned(value)
                }
            };
            slots.push(slot);
            for &j in &self.inputs[i] {
                if self.last_use[j] == i {
                    slots[j] = Slot::Empty;
                }
            }
        }
        Ok(self.outputs.iter().map(|&o| slots[o].get().clone()).collect())
    }
}

/// Evaluates one expression.
pub fn forward<T: Real>(f: &Expr<T>, bindings: &Bindings<T>) -> Result<Tensor<T>, EngineError> {
    Ok(Program::new(std::slice::from_ref(f)).run(bindings)?.remove(0))
}
