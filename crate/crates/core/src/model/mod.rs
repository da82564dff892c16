//! The HamGNN encoder: feature compression, per-layer momentum and
//! Hamiltonian flow, neighborhood aggregation, and the task decoders.

mod checkpoint;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    self, Activation, Binder, Bindings, Csr, EngineError, Expr, MlpParams, MlpVars, Program, Real, SparseOp, Tensor,
};
use crate::graphdata::GraphDataset;
use crate::hamiltonian::{FieldOptions, HamiltonianError, HamiltonianSpec, Signature, VariantKind};
use crate::odeint::{self, IntegrationConfig, OdeError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("integration failed in layer {layer} at node {node} (step {step})")]
    Integration { layer: usize, node: usize, step: usize },
    #[error("pair ({0}, {1}) outside the graph")]
    BadPair(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Field(#[from] HamiltonianError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// What runs between aggregations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Geodesic,
    Flexible,
    Convex,
    Relaxed,
    Symplectic,
    GeodesicRelaxed,
    HigherDim,
    VanillaOde,
    /// No dynamics: compression followed by iterated aggregation.
    AggregateOnly,
    /// Feature-only baseline that never reads edges.
    Mlp,
}

impl ModelKind {
    pub fn field(self) -> Option<VariantKind> {
        Some(match self {
            ModelKind::Geodesic => VariantKind::Geodesic,
            ModelKind::Flexible => VariantKind::Flexible,
            ModelKind::Convex => VariantKind::Convex,
            ModelKind::Relaxed => VariantKind::Relaxed,
            ModelKind::Symplectic => VariantKind::Symplectic,
            ModelKind::GeodesicRelaxed => VariantKind::GeodesicRelaxed,
            ModelKind::HigherDim => VariantKind::HigherDim,
            ModelKind::VanillaOde => VariantKind::VanillaOde,
            ModelKind::AggregateOnly | ModelKind::Mlp => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self.field() {
            Some(v) => v.name(),
            None if self == ModelKind::Mlp => "mlp",
            None => "aggregate-only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Classification,
    Link,
}

fn default_hidden() -> usize {
    64
}
fn default_layers() -> usize {
    3
}
fn default_eps() -> f64 {
    crate::hamiltonian::DEFAULT_SYMPLECTIC_EPS
}
fn default_rho() -> f64 {
    0.1
}
fn default_phi() -> Activation {
    Activation::Tanh
}
fn default_convex_activation() -> Activation {
    Activation::Rehu
}
fn default_true() -> bool {
    true
}
fn default_kind() -> ModelKind {
    ModelKind::Flexible
}
fn default_decoder() -> Decoder {
    Decoder::Classification
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_kind")]
    pub variant: ModelKind,
    #[serde(default)]
    pub integration: IntegrationConfig,
    /// Metric signature; Riemannian `(0, hidden)` when absent.
    #[serde(default)]
    pub signature: Option<Signature>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Momentum width of the higher-dimensional flow; `hidden` when absent.
    #[serde(default)]
    pub momentum_dim: Option<usize>,
    #[serde(default = "default_phi")]
    pub phi: Activation,
    /// Hidden width inside the field networks; `hidden` when absent.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default = "default_convex_activation")]
    pub convex_activation: Activation,
    /// Aggregate after the last flow as well, giving one aggregation per layer.
    #[serde(default = "default_true")]
    pub final_aggregation: bool,
    #[serde(default = "default_decoder")]
    pub decoder: Decoder,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            layers: default_layers(),
            variant: default_kind(),
            integration: IntegrationConfig::default(),
            signature: None,
            eps: default_eps(),
            rho: default_rho(),
            momentum_dim: None,
            phi: default_phi(),
            width: None,
            convex_activation: default_convex_activation(),
            final_aggregation: true,
            decoder: default_decoder(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if let Some(sig) = self.signature {
            if sig.dim() != self.hidden {
                return bad(format!(
                    "signature ({}, {}) has r + s = {} but hidden is {}",
                    sig.r,
                    sig.s,
                    sig.dim(),
                    self.hidden
                ));
            }
        }
        if self.momentum_dim == Some(0) {
            return bad("momentum_dim must be at least 1".into());
        }
        if self.width == Some(0) {
            return bad("width must be at least 1".into());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        if self.variant == ModelKind::Convex && !self.convex_activation.is_convex_admissible() {
            return bad(format!(
                "convex_activation {:?} is not allowed; use rehu or kappa",
                self.convex_activation
            ));
        }
        self.integration
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn field_options(&self) -> FieldOptions {
        let d = self.hidden;
        FieldOptions {
            dim: d,
            width: self.width.unwrap_or(d),
            signature: self.signature.unwrap_or(Signature::riemannian(d)),
            eps: self.eps,
            rho: self.rho,
            momentum_dim: self.momentum_dim.unwrap_or(d),
            phi: self.phi,
            convex_activation: self.convex_activation,
        }
    }

    /// Width of the generalized momentum the momentum nets produce.
    pub fn momentum_width(&self) -> usize {
        match self.variant {
            ModelKind::HigherDim => self.momentum_dim.unwrap_or(self.hidden),
            ModelKind::VanillaOde | ModelKind::AggregateOnly | ModelKind::Mlp => 0,
            _ => self.hidden,
        }
    }
}

/// One encoder layer: momentum initializer and flow.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    /// Affine `d -> k`; absent for flows without momentum.
    pub q_net: Option<MlpParams<T>>,
    pub field: HamiltonianSpec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// Affine `F -> d`; for the MLP baseline the whole network.
    pub compressor: MlpParams<T>,
    pub layers: Vec<LayerParams<T>>,
    /// Affine `d -> C` for classification.
    pub head: Option<MlpParams<T>>,
}

fn affine<T: Real, R: Rng>(from: usize, to: usize, rng: &mut R) -> MlpParams<T> {
    MlpParams::init(&[from, to], &[Activation::Identity], rng)
}

impl<T: Real> ModelParams<T> {
    pub fn init<R: Rng>(
        cfg: &ModelConfig,
        num_features: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.hidden;
        if num_features == 0 {
            return Err(ModelError::Config("dataset has no features".into()));
        }
        let compressor = if cfg.variant == ModelKind::Mlp {
            MlpParams::init(&[num_features, d, d], &[Activation::Relu, Activation::Relu], rng)
        } else {
            affine(num_features, d, rng)
        };
        let mut layers = Vec::new();
        if let Some(kind) = cfg.variant.field() {
            let opts = cfg.field_options();
            for _ in 0..cfg.layers {
                let k = cfg.momentum_width();
                let q_net = (k > 0).then(|| affine(d, k, rng));
                let field = HamiltonianSpec::init(kind, &opts, rng);
                field.validate()?;
                layers.push(LayerParams { q_net, field });
            }
        }
        let head = match cfg.decoder {
            Decoder::Classification => {
                if num_classes == 0 {
                    return Err(ModelError::Config("classification needs at least one class".into()));
                }
                Some(affine(d, num_classes, rng))
            }
            Decoder::Link => None,
        };
        Ok(Self {
            compressor,
            layers,
            head,
        })
    }

    pub fn num_features(&self) -> usize {
        self.compressor.input_dim()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.head.as_ref().map(MlpParams::output_dim)
    }

    /// All parameter tensors in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.compressor.named_tensors("compress");
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(q) = &layer.q_net {
                out.extend(q.named_tensors(&format!("layer{l}.q")));
            }
            out.extend(layer.field.named_tensors(&format!("layer{l}.field")));
        }
        if let Some(h) = &self.head {
            out.extend(h.named_tensors("head"));
        }
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.compressor.tensors_mut();
        for layer in &mut self.layers {
            if let Some(q) = &mut layer.q_net {
                out.extend(q.tensors_mut());
            }
            out.extend(layer.field.tensors_mut());
        }
        if let Some(h) = &mut self.head {
            out.extend(h.tensors_mut());
        }
        out
    }

    /// The same parameters in another scalar type.
    pub fn cast<U: Real>(&self, cfg: &ModelConfig) -> Result<ModelParams<U>, ModelError> {
        let mut out = ModelParams::<U>::init(
            cfg,
            self.num_features(),
            self.num_classes().unwrap_or(0),
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let src = self.named_tensors();
        let dst = out.tensors_mut();
        if src.len() != dst.len() {
            return Err(ModelError::Shape("parameters do not match the config".into()));
        }
        for ((_, from), to) in src.into_iter().zip(dst) {
            if from.shape() != to.shape() {
                return Err(ModelError::Shape(format!("{:?} vs {:?}", from.shape(), to.shape())));
            }
            *to = from.cast();
        }
        Ok(out)
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Reinstates the convex constraint on every convex field.
    pub fn project(&mut self) {
        for layer in &mut self.layers {
            crate::hamiltonian::project_convex(&mut layer.field);
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.layers.iter().all(|l| match &l.field {
            HamiltonianSpec::ConvexH {
                h_net: crate::hamiltonian::EnergyNet::Learned(net),
            } => net.is_nonnegative_after_first(),
            _ => true,
        })
    }
}

/// `I + D^-1 A`: each node keeps its vector and adds the mean of its
/// neighbors; isolated nodes add nothing.
pub fn aggregation_matrix<T: Real>(n: usize, edges: &[(usize, usize)]) -> Csr<T> {
    let mut degree = vec![0usize; n];
    for &(u, v) in edges {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut triplets: Vec<(usize, usize, T)> = (0..n).map(|i| (i, i, T::one())).collect();
    for &(u, v) in edges {
        triplets.push((u, v, T::one() / T::lit(degree[u] as f64)));
        triplets.push((v, u, T::one() / T::lit(degree[v] as f64)));
    }
    Csr::from_triplets(n, n, &triplets)
}

/// Read-only graph inputs shared by all forward passes.
#[derive(Clone, Debug)]
pub struct GraphInputs<T> {
    pub n: usize,
    pub features: Tensor<T>,
    pub aggregation: SparseOp<T>,
}

impl<T: Real> GraphInputs<T> {
    pub fn new(ds: &GraphDataset) -> Self {
        Self {
            n: ds.n,
            features: ds.features.cast(),
            aggregation: SparseOp::new(aggregation_matrix(ds.n, &ds.edges)),
        }
    }
}

/// Applies the aggregation to node vectors.
pub fn aggregate<T: Real>(x: &Tensor<T>, edges: &[(usize, usize)]) -> Result<Tensor<T>, ModelError> {
    let op = SparseOp::new(aggregation_matrix(x.shape()[0], edges));
    Ok(engine::forward(&Expr::constant(x.clone()).spmm(&op), &Bindings::new())?)
}

struct BoundLayer<T> {
    q_net: Option<MlpVars<T>>,
    field: crate::hamiltonian::BoundField<T>,
}

/// Parameters turned into graph nodes, ready to build forward passes.
pub struct BoundModel<T> {
    cfg: ModelConfig,
    compressor: MlpVars<T>,
    layers: Vec<BoundLayer<T>>,
    head: Option<MlpVars<T>>,
}

impl<T: Real> BoundModel<T> {
    /// Binds the parameters in [`ModelParams::named_tensors`] order.
    pub fn new(cfg: &ModelConfig, params: &ModelParams<T>, binder: &mut Binder<T>) -> Result<Self, ModelError> {
        let compressor = params.compressor.bind(binder, "compress");
        let mut layers = Vec::with_capacity(params.layers.len());
        for (l, layer) in params.layers.iter().enumerate() {
            let q_net = layer.q_net.as_ref().map(|q| q.bind(binder, &format!("layer{l}.q")));
            let field = layer.field.bind(binder, &format!("layer{l}.field"))?;
            layers.push(BoundLayer { q_net, field });
        }
        let head = params.head.as_ref().map(|h| h.bind(binder, "head"));
        Ok(Self {
            cfg: cfg.clone(),
            compressor,
            layers,
            head,
        })
    }

    fn expects_aggregation(&self, l: usize) -> bool {
        l + 1 < self.cfg.layers || self.cfg.final_aggregation
    }

    /// One layer: momentum, flow, projection onto positions.
    fn flow(&self, layer: &BoundLayer<T>, x: &Expr<T>) -> Result<Expr<T>, ModelError> {
        let d = self.cfg.hidden;
        let z0 = match &layer.q_net {
            Some(q) => x.concat_cols(&q.apply(x)),
            None => x.clone(),
        };
        let traj = odeint::integrate_expr(&layer.field, &z0, &self.cfg.integration)?;
        Ok(traj.last().expect("trajectory holds the start").slice_cols(0, d))
    }

    /// Node embeddings `[n, d]` as a graph over the bound parameters.
    pub fn encode(&self, g: &GraphInputs<T>) -> Result<Expr<T>, ModelError> {
        let mut x = self.compressor.apply(&Expr::constant(g.features.clone()));
        if self.cfg.variant == ModelKind::Mlp {
            return Ok(x);
        }
        for l in 0..self.cfg.layers {
            if let Some(layer) = self.layers.get(l) {
                x = self.flow(layer, &x)?;
            }
            if self.expects_aggregation(l) {
                x = x.spmm(&g.aggregation);
            }
        }
        Ok(x)
    }

    pub fn logits(&self, z: &Expr<T>) -> Result<Expr<T>, ModelError> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| ModelError::Config("model has no classification head".into()))?;
        Ok(head.apply(z))
    }
}

/// `<z_u, z_v>` for each pair, as a graph `[pairs]`.
pub fn link_logits<T: Real>(z: &Expr<T>, pairs: &[(usize, usize)]) -> Result<Expr<T>, ModelError> {
    let n = z.shape()[0];
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(ModelError::BadPair(u, v));
    }
    let us = Arc::new(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let vs = Arc::new(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(z.gather_rows(us).mul(&z.gather_rows(vs)).sum_cols())
}

fn frozen_field_step<T: Real>(
    field: &crate::hamiltonian::BoundField<T>,
    cfg: &IntegrationConfig,
    rows: usize,
    width: usize,
) -> Result<(Expr<T>, Program<T>, usize), ModelError> {
    let plan = cfg.plan()?;
    let leaf = Expr::leaf("z", &[rows, width]);
    let next = odeint::step_expr(field, &leaf, cfg.method, T::lit(plan.step))?;
    Ok((leaf, Program::new(&[next]), plan.steps))
}

/// Node embeddings computed layer by layer. Integration failures name the
/// layer, the first offending node and the step.
pub fn encode<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    g: &GraphInputs<T>,
) -> Result<Tensor<T>, ModelError> {
    let mut binder = Binder::frozen();
    let model = BoundModel::new(cfg, params, &mut binder)?;
    let x0 = model.compressor.apply(&Expr::constant(g.features.clone()));
    let mut x = engine::forward(&x0, &Bindings::new())?;
    if cfg.variant == ModelKind::Mlp {
        return Ok(x);
    }
    let d = cfg.hidden;
    for l in 0..cfg.layers {
        if let Some(layer) = model.layers.get(l) {
            let xe = Expr::constant(x.clone());
            let z0 = match &layer.q_net {
                Some(q) => xe.concat_cols(&q.apply(&xe)),
                None => xe,
            };
            let mut z = engine::forward(&z0, &Bindings::new())?;
            let width = z.shape()[1];
            let (leaf, program, steps) = frozen_field_step(&layer.field, &cfg.integration, g.n, width)?;
            for step in 1..=steps {
                match program.run(&Bindings::new().with(&leaf, z.clone())) {
                    Ok(mut out) => z = out.remove(0),
                    Err(EngineError::NonFiniteNode { .. }) => {
                        let node = first_failing_row(&layer.field, &cfg.integration, &z).unwrap_or(0);
                        return Err(ModelError::Integration { layer: l, node, step });
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let cols: Vec<T> = (0..g.n).flat_map(|i| z.row(i)[..d].to_vec()).collect();
            x = Tensor::new(&[g.n, d], cols)?;
        }
        if model.expects_aggregation(l) {
            x = engine::forward(&Expr::constant(x).spmm(&g.aggregation), &Bindings::new())?;
        }
    }
    Ok(x)
}

// Node dynamics are independent, so the offending node is found by
// stepping rows one at a time.
fn first_failing_row<T: Real>(
    field: &crate::hamiltonian::BoundField<T>,
    cfg: &IntegrationConfig,
    z: &Tensor<T>,
) -> Option<usize> {
    let width = z.shape()[1];
    let (leaf, program, _) = frozen_field_step(field, cfg, 1, width).ok()?;
    (0..z.shape()[0]).find(|&i| {
        let row = Tensor::new(&[1, width], z.row(i).to_vec()).expect("finite row");
        program.run(&Bindings::new().with(&leaf, row)).is_err()
    })
}

/// Rowwise affine head.
pub fn decode_class<T: Real>(head: &MlpParams<T>, z: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    if z.rank() != 2 || z.shape()[1] != head.input_dim() {
        return Err(ModelError::Shape(format!(
            "embeddings {:?} for a head taking {}",
            z.shape(),
            head.input_dim()
        )));
    }
    let vars = head.bind(&mut Binder::frozen(), "head");
    Ok(engine::forward(
        &vars.apply(&Expr::constant(z.clone())),
        &Bindings::new(),
    )?)
}

/// Row argmax; ties go to the lowest index.
pub fn predict<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.shape()[0])
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `sigmoid(<z_u, z_v>)` for each pair.
pub fn decode_link<T: Real>(z: &Tensor<T>, pairs: &[(usize, usize)]) -> Result<Vec<T>, ModelError> {
    let logits = link_logits(&Expr::constant(z.clone()), pairs)?.sigmoid();
    Ok(engine::forward(&logits, &Bindings::new())?.into_data())
}

/// The baseline MLP logits: the compressor network followed by the head.
pub fn baseline_mlp<T: Real>(params: &ModelParams<T>, ds: &GraphDataset) -> Result<Tensor<T>, ModelError> {
    let cfg = ModelConfig {
        variant: ModelKind::Mlp,
        hidden: params.compressor.output_dim(),
        ..ModelConfig::default()
    };
    let z = encode(&cfg, params, &GraphInputs::new(ds))?;
    let head = params
        .head
        .as_ref()
        .ok_or_else(|| ModelError::Config("baseline needs a classification head".into()))?;
    decode_class(head, &z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> GraphDataset {
        GraphDataset::new(
            "p",
            vec![(0, 1), (1, 2)],
            Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap(),
            vec![0, 0, 0],
            vec![],
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn aggregation_by_hand() {
        let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = aggregate(&x, &path3().edges).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0, 5.0]);
        let c = Tensor::full(&[3, 2], 1.5);
        assert!(aggregate(&c, &path3().edges).unwrap().data().iter().all(|&v| v == 3.0));
        let iso = Tensor::new(&[2, 1], vec![7.0, -1.0]).unwrap();
        assert_eq!(aggregate(&iso, &[]).unwrap(), iso);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig {
            hidden: 4,
            variant: ModelKind::Geodesic,
            signature: Some(Signature { r: 1, s: 2 }),
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.signature = Some(Signature { r: 1, s: 3 });
        cfg.validate().unwrap();
        cfg.layers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parameter_order_matches_binding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [
            ModelKind::Flexible,
            ModelKind::HigherDim,
            ModelKind::VanillaOde,
            ModelKind::Mlp,
            ModelKind::AggregateOnly,
        ] {
            let cfg = ModelConfig {
                hidden: 3,
                layers: 2,
                variant: kind,
                ..ModelConfig::default()
            };
            let mut params = ModelParams::<f64>::init(&cfg, 5, 2, &mut rng).unwrap();
            let mut binder = Binder::new();
            BoundModel::new(&cfg, &params, &mut binder).unwrap();
            let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
            assert_eq!(binder.names(), names.as_slice());
            assert_eq!(params.tensors_mut().len(), names.len());
        }
    }

    #[test]
    fn zero_head_ties_to_first_class() {
        let head = MlpParams::<f64>::zeros(&[2, 3], &[Activation::Identity]);
        let z = Tensor::new(&[2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let logits = decode_class(&head, &z).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert_eq!(predict(&logits), vec![0, 0]);
    }

    #[test]
    fn link_decoder_values() {
        let z = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, (3f64.ln()).sqrt(), 0.0]).unwrap();
        let p = decode_link(&z, &[(0, 1), (2, 2)]).unwrap();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.75).abs() < 1e-15);
        assert!(matches!(decode_link(&z, &[(0, 3)]), Err(ModelError::BadPair(0, 3))));
    }
}
