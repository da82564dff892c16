use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bindings, EngineError, Expr, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Sin,
    Relu,
    Rehu,
    Kappa,
}

impl Activation {
    pub fn apply<T: Real>(self, x: &Expr<T>) -> Expr<T> {
        match self {
            Activation::Identity => x.clone(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Sin => x.sin(),
            Activation::Relu => x.relu(),
            Activation::Rehu => x.rehu(),
            Activation::Kappa => x.kappa(),
        }
    }

    /// Admissible inside an input-convex network.
    pub fn is_convex_admissible(self) -> bool {
        matches!(self, Activation::Rehu | Activation::Kappa)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `[in, out]`, applied as `x . weight`.
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    pub activation: Activation,
}

/// Parameters of a fully connected stack.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> MlpParams<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self, EngineError> {
        if layers.is_empty() {
            return Err(EngineError::ShapeMismatch("network without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.shape() != [l.weight.shape()[1]] {
                return Err(EngineError::ShapeMismatch(format!(
                    "layer {i}: weight {:?} with bias {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.shape()[1] != pair[1].weight.shape()[0] {
                return Err(EngineError::ShapeMismatch(format!(
                    "layer {} outputs {} but layer {} takes {}",
                    i,
                    pair[0].weight.shape()[1],
                    i + 1,
                    pair[1].weight.shape()[0]
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `dims = [in, hidden.., out]`, one activation per affine layer.
    /// Weights uniform in `+-1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(dims.len(), activations.len() + 1, "one activation per layer");
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.gen_range(-bound..=bound)))
                    .collect();
                Layer {
                    weight: Tensor::from_raw(vec![fan_in, fan_out], data),
                    bias: Tensor::zeros(&[fan_out]),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(dims.len(), activations.len() + 1, "one activation per layer");
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
                activation,
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.shape()[1]
    }

    /// Clamps every weight from the second layer on to be non-negative.
    pub fn clamp_nonnegative_after_first(&mut self) {
        for layer in self.layers.iter_mut().skip(1) {
            for w in layer.weight.data_mut() {
                *w = w.max(T::zero());
            }
        }
    }

    pub fn is_nonnegative_after_first(&self) -> bool {
        self.layers
            .iter()
            .skip(1)
            .all(|l| l.weight.data().iter().all(|&w| w >= T::zero()))
    }

    /// Named tensors in a fixed order: `prefix.{i}.weight`, `prefix.{i}.bias`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn bind(&self, binder: &mut Binder<T>, prefix: &str) -> MlpVars<T> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    binder.param(format!("{prefix}.{i}.weight"), &l.weight),
                    binder.param(format!("{prefix}.{i}.bias"), &l.bias),
                    l.activation,
                )
            })
            .collect();
        MlpVars { layers }
    }
}

/// An [`MlpParams`] whose tensors have been turned into graph nodes.
#[derive(Clone, Debug)]
pub struct MlpVars<T> {
    layers: Vec<(Expr<T>, Expr<T>, Activation)>,
}

impl<T: Real> MlpVars<T> {
    /// Applies the stack rowwise to `x: [n, in]`.
    pub fn apply(&self, x: &Expr<T>) -> Expr<T> {
        self.layers
            .iter()
            .fold(x.clone(), |h, (w, b, act)| act.apply(&h.affine(w, b)))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |(w, _, _)| w.shape()[1])
    }
}

/// Turns parameter tensors into leaf nodes (or constants, when frozen),
/// recording the leaves in creation order together with their bindings.
#[derive(Debug)]
pub struct Binder<T> {
    frozen: bool,
    leaves: Vec<Expr<T>>,
    names: Vec<String>,
    bindings: Bindings<T>,
}

impl<T: Real> Binder<T> {
    pub fn new() -> Self {
        Self {
            frozen: false,
            leaves: Vec::new(),
            names: Vec::new(),
            bindings: Bindings::new(),
        }
    }

    /// A binder that embeds parameters as constants; nothing is trainable.
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::new()
        }
    }

    pub fn param(&mut self, name: String, value: &Tensor<T>) -> Expr<T> {
        if self.frozen {
            return Expr::constant(value.clone());
        }
        let leaf = Expr::leaf(name.clone(), value.shape());
        self.bindings.bind(&leaf, value.clone());
        self.leaves.push(leaf.clone());
        self.names.push(name);
        leaf
    }

    pub fn leaves(&self) -> &[Expr<T>] {
        &self.leaves
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bindings(&self) -> &Bindings<T> {
        &self.bindings
    }

    pub fn bindings_mut(&mut self) -> &mut Bindings<T> {
        &mut self.bindings
    }

    pub fn into_parts(self) -> (Vec<Expr<T>>, Bindings<T>) {
        (self.leaves, self.bindings)
    }
}

impl<T: Real> Default for Binder<T> {
    fn default() -> Self {
        Self::new()
    }
}
