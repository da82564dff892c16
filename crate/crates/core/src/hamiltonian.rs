//! Phase-space dynamics: the learnable Hamiltonian variants, their energies
//! and vector fields.
//!
//! Every Hamiltonian-style field is obtained by differentiating the energy
//! graph with [`engine::grad`]; no variant hand-codes its partials. The
//! state of `n` nodes is carried as one matrix `z = [q | p]` of shape
//! `[n, d + k]`, and `grad(sum H, z)` yields all per-node partials at once
//! because each node's energy only depends on its own row.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, Activation, Binder, EngineError, Expr, MlpParams, MlpVars, Program, Real, Tensor};
use crate::odeint::VectorField;

/// Lower bound added to the logistic output of the metric network.
pub const METRIC_FLOOR: f64 = 0.01;

/// Default regularization of the symplectic matrix solve.
pub const DEFAULT_SYMPLECTIC_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error("variant {0} has no Hamiltonian")]
    NoHamiltonian(VariantKind),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid field parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Metric signature: `r` entries of -1 followed by `s` entries of +1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub r: usize,
    pub s: usize,
}

impl Signature {
    pub fn riemannian(d: usize) -> Self {
        Self { r: 0, s: d }
    }

    pub fn dim(&self) -> usize {
        self.r + self.s
    }

    pub fn signs<T: Real>(&self) -> Vec<T> {
        (0..self.dim())
            .map(|i| if i < self.r { -T::one() } else { T::one() })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Geodesic,
    Flexible,
    Convex,
    Relaxed,
    Symplectic,
    GeodesicRelaxed,
    HigherDim,
    VanillaOde,
}

impl VariantKind {
    pub const ALL: [VariantKind; 8] = [
        VariantKind::Geodesic,
        VariantKind::Flexible,
        VariantKind::Convex,
        VariantKind::Relaxed,
        VariantKind::Symplectic,
        VariantKind::GeodesicRelaxed,
        VariantKind::HigherDim,
        VariantKind::VanillaOde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Geodesic => "geodesic",
            VariantKind::Flexible => "flexible",
            VariantKind::Convex => "convex",
            VariantKind::Relaxed => "relaxed",
            VariantKind::Symplectic => "symplectic",
            VariantKind::GeodesicRelaxed => "geodesic-relaxed",
            VariantKind::HigherDim => "higher-dim",
            VariantKind::VanillaOde => "vanilla-ode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Whether the variant defines a scalar energy.
    pub fn has_hamiltonian(self) -> bool {
        !matches!(self, VariantKind::HigherDim | VariantKind::VanillaOde)
    }

    /// Whether the flow carries a momentum vector at all.
    pub fn has_momentum(self) -> bool {
        self != VariantKind::VanillaOde
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar energy network over `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergyNet<T> {
    /// MLP on the concatenation `[q | p]` with one output.
    Learned(MlpParams<T>),
    /// Frozen `(|q|^2 + |p|^2) / 2`, the harmonic oscillator.
    Quadratic,
}

/// Magnitudes of the diagonal inverse metric, before the signature signs.
#[derive(Clone, Debug)]
pub enum MetricNet<T> {
    /// `sigmoid(h_net(q)) + 0.01`.
    Learned(MlpParams<T>),
    /// Frozen position-independent magnitudes.
    Constant(Vec<T>),
    /// Frozen closed-form magnitudes `[n, d] -> [n, d]`.
    Analytic(fn(&Expr<T>) -> Expr<T>),
}

impl<T: PartialEq> PartialEq for MetricNet<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (MetricNet::Learned(a), MetricNet::Learned(b)) => a == b,
            (MetricNet::Constant(a), MetricNet::Constant(b)) => a == b,
            (MetricNet::Analytic(a), MetricNet::Analytic(b)) => std::ptr::fn_addr_eq(*a, *b),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianSpec<T> {
    GeodesicMetric {
        h_net: MetricNet<T>,
        signature: Signature,
    },
    FlexibleH {
        h_net: EnergyNet<T>,
    },
    ConvexH {
        h_net: EnergyNet<T>,
    },
    RelaxedH {
        h_net: EnergyNet<T>,
        f_net: MlpParams<T>,
    },
    SymplecticForm {
        h_net: EnergyNet<T>,
        f_net: MlpParams<T>,
        eps: T,
    },
    GeodesicRelaxed {
        h_net: MetricNet<T>,
        signature: Signature,
        f_net: MlpParams<T>,
    },
    HigherDimMomentum {
        h1_net: MlpParams<T>,
        h2_net: MlpParams<T>,
        rho: T,
        phi: Activation,
    },
    VanillaOde {
        f_net: MlpParams<T>,
    },
}

/// Options used when initializing a field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOptions {
    pub dim: usize,
    /// Hidden width of the field networks.
    pub width: usize,
    pub signature: Signature,
    pub eps: f64,
    pub rho: f64,
    /// Momentum dimension of the higher-dimensional flow.
    pub momentum_dim: usize,
    pub phi: Activation,
    pub convex_activation: Activation,
}

impl FieldOptions {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            width: dim,
            signature: Signature::riemannian(dim),
            eps: DEFAULT_SYMPLECTIC_EPS,
            rho: 0.1,
            momentum_dim: dim,
            phi: Activation::Tanh,
            convex_activation: Activation::Rehu,
        }
    }
}

/// A node's point in phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState<T> {
    pub q: Tensor<T>,
    pub p: Tensor<T>,
}

impl<T: Real> PhaseState<T> {
    pub fn new(q: &[T], p: &[T]) -> Result<Self, EngineError> {
        Ok(Self {
            q: Tensor::vector(q)?,
            p: Tensor::vector(p)?,
        })
    }

    pub fn from_f64(q: &[f64], p: &[f64]) -> Result<Self, EngineError> {
        Ok(Self {
            q: Tensor::from_f64(&[q.len()], q)?,
            p: Tensor::from_f64(&[p.len()], p)?,
        })
    }

    /// The concatenated row `[q | p]` as a `[1, d + k]` matrix.
    pub fn to_row(&self) -> Tensor<T> {
        let mut data = self.q.data().to_vec();
        data.extend_from_slice(self.p.data());
        Tensor::from_raw(vec![1, data.len()], data)
    }

    /// Splits a `[d + k]` slice back into a state.
    pub fn from_row(row: &[T], d: usize) -> Self {
        Self {
            q: Tensor::from_raw(vec![d], row[..d].to_vec()),
            p: Tensor::from_raw(vec![row.len() - d], row[d..].to_vec()),
        }
    }
}

fn energy_mlp<T: Real, R: Rng>(d: usize, width: usize, rng: &mut R) -> MlpParams<T> {
    MlpParams::init(&[2 * d, width, 1], &[Activation::Tanh, Activation::Identity], rng)
}

fn bias_mlp<T: Real, R: Rng>(d: usize, width: usize, rng: &mut R) -> MlpParams<T> {
    MlpParams::init(&[d, width, d], &[Activation::Tanh, Activation::Identity], rng)
}

impl<T: Real> HamiltonianSpec<T> {
    /// Randomly initialized field of the given kind.
    pub fn init<R: Rng>(kind: VariantKind, opts: &FieldOptions, rng: &mut R) -> Self {
        let (d, w) = (opts.dim, opts.width);
        let metric = |rng: &mut R| {
            MetricNet::Learned(MlpParams::init(
                &[d, w, d],
                &[Activation::Tanh, Activation::Identity],
                rng,
            ))
        };
        match kind {
            VariantKind::Geodesic => HamiltonianSpec::GeodesicMetric {
                h_net: metric(rng),
                signature: opts.signature,
            },
            VariantKind::Flexible => HamiltonianSpec::FlexibleH {
                h_net: EnergyNet::Learned(energy_mlp(d, w, rng)),
            },
            VariantKind::Convex => {
                let act = opts.convex_activation;
                let mut net = MlpParams::init(&[2 * d, w, w, 1], &[act, act, act], rng);
                net.clamp_nonnegative_after_first();
                HamiltonianSpec::ConvexH {
                    h_net: EnergyNet::Learned(net),
                }
            }
            VariantKind::Relaxed => HamiltonianSpec::RelaxedH {
                h_net: EnergyNet::Learned(energy_mlp(d, w, rng)),
                f_net: bias_mlp(d, w, rng),
            },
            VariantKind::Symplectic => HamiltonianSpec::SymplecticForm {
                h_net: EnergyNet::Learned(MlpParams::init(
                    &[2 * d, w, 1],
                    &[Activation::Sin, Activation::Sin],
                    rng,
                )),
                f_net: MlpParams::init(&[2 * d, w, 2 * d], &[Activation::Sin, Activation::Sin], rng),
                eps: T::lit(opts.eps),
            },
            VariantKind::GeodesicRelaxed => HamiltonianSpec::GeodesicRelaxed {
                h_net: metric(rng),
                signature: opts.signature,
                f_net: bias_mlp(d, w, rng),
            },
            VariantKind::HigherDim => {
                let k = opts.momentum_dim;
                HamiltonianSpec::HigherDimMomentum {
                    h1_net: MlpParams::init(&[k, w, d], &[Activation::Tanh, Activation::Identity], rng),
                    h2_net: MlpParams::init(&[d, w, k], &[Activation::Tanh, Activation::Identity], rng),
                    rho: T::lit(opts.rho),
                    phi: opts.phi,
                }
            }
            VariantKind::VanillaOde => HamiltonianSpec::VanillaOde {
                f_net: bias_mlp(d, w, rng),
            },
        }
    }

    pub fn kind(&self) -> VariantKind {
        match self {
            HamiltonianSpec::GeodesicMetric { .. } => VariantKind::Geodesic,
            HamiltonianSpec::FlexibleH { .. } => VariantKind::Flexible,
            HamiltonianSpec::ConvexH { .. } => VariantKind::Convex,
            HamiltonianSpec::RelaxedH { .. } => VariantKind::Relaxed,
            HamiltonianSpec::SymplecticForm { .. } => VariantKind::Symplectic,
            HamiltonianSpec::GeodesicRelaxed { .. } => VariantKind::GeodesicRelaxed,
            HamiltonianSpec::HigherDimMomentum { .. } => VariantKind::HigherDim,
            HamiltonianSpec::VanillaOde { .. } => VariantKind::VanillaOde,
        }
    }

    /// `(d, k)`: position and momentum dimensions.
    pub fn dims(&self) -> Result<(usize, usize), HamiltonianError> {
        let dim_err = |m: String| Err(HamiltonianError::Dimension(m));
        let energy_dim = |net: &EnergyNet<T>| -> Result<Option<usize>, HamiltonianError> {
            match net {
                EnergyNet::Learned(m) => {
                    if m.output_dim() != 1 || m.input_dim() % 2 != 0 {
                        return Err(HamiltonianError::Dimension(format!(
                            "energy network maps {} -> {}, need 2d -> 1",
                            m.input_dim(),
                            m.output_dim()
                        )));
                    }
                    Ok(Some(m.input_dim() / 2))
                }
                EnergyNet::Quadratic => Ok(None),
            }
        };
        let metric_dim = |net: &MetricNet<T>, sig: &Signature| -> Result<usize, HamiltonianError> {
            let d = sig.dim();
            match net {
                MetricNet::Learned(m) if m.input_dim() != d || m.output_dim() != d => {
                    Err(HamiltonianError::Dimension(format!(
                        "metric network maps {} -> {} but signature ({}, {}) needs {d} -> {d}",
                        m.input_dim(),
                        m.output_dim(),
                        sig.r,
                        sig.s
                    )))
                }
                MetricNet::Constant(v) if v.len() != d => Err(HamiltonianError::Dimension(format!(
                    "constant metric has {} entries, signature needs {d}",
                    v.len()
                ))),
                _ => Ok(d),
            }
        };
        let square = |m: &MlpParams<T>, d: usize, what: &str| -> Result<(), HamiltonianError> {
            if m.input_dim() != d || m.output_dim() != d {
                return Err(HamiltonianError::Dimension(format!(
                    "{what} maps {} -> {}, need {d} -> {d}",
                    m.input_dim(),
                    m.output_dim()
                )));
            }
            Ok(())
        };
        match self {
            HamiltonianSpec::GeodesicMetric { h_net, signature } => {
                let d = metric_dim(h_net, signature)?;
                if d == 0 {
                    return dim_err("empty signature".into());
                }
                Ok((d, d))
            }
            HamiltonianSpec::GeodesicRelaxed {
                h_net,
                signature,
                f_net,
            } => {
                let d = metric_dim(h_net, signature)?;
                square(f_net, d, "bias network")?;
                Ok((d, d))
            }
            HamiltonianSpec::FlexibleH { h_net } | HamiltonianSpec::ConvexH { h_net } => match energy_dim(h_net)? {
                Some(d) => Ok((d, d)),
                None => dim_err("quadratic energy without a network has no intrinsic dimension".into()),
            },
            HamiltonianSpec::RelaxedH { h_net, f_net } => {
                let d = f_net.input_dim();
                square(f_net, d, "bias network")?;
                if let Some(e) = energy_dim(h_net)? {
                    if e != d {
                        return dim_err(format!("energy dimension {e} vs bias dimension {d}"));
                    }
                }
                Ok((d, d))
            }
            HamiltonianSpec::SymplecticForm { h_net, f_net, .. } => {
                let two_d = f_net.input_dim();
                if two_d % 2 != 0 || f_net.output_dim() != two_d {
                    return dim_err(format!(
                        "one-form network maps {} -> {}, need 2d -> 2d",
                        f_net.input_dim(),
                        f_net.output_dim()
                    ));
                }
                let d = two_d / 2;
                if let Some(e) = energy_dim(h_net)? {
                    if e != d {
                        return dim_err(format!("energy dimension {e} vs one-form dimension {d}"));
                    }
                }
                Ok((d, d))
            }
            HamiltonianSpec::HigherDimMomentum { h1_net, h2_net, .. } => {
                let (k, d) = (h1_net.input_dim(), h1_net.output_dim());
                if h2_net.input_dim() != d || h2_net.output_dim() != k {
                    return dim_err(format!(
                        "h1 maps {k} -> {d} so h2 must map {d} -> {k}, got {} -> {}",
                        h2_net.input_dim(),
                        h2_net.output_dim()
                    ));
                }
                Ok((d, k))
            }
            HamiltonianSpec::VanillaOde { f_net } => {
                let d = f_net.input_dim();
                square(f_net, d, "vanilla field")?;
                Ok((d, 0))
            }
        }
    }

    /// Checks dimensions and variant-specific constraints.
    pub fn validate(&self) -> Result<(usize, usize), HamiltonianError> {
        let dims = self.dims()?;
        match self {
            HamiltonianSpec::ConvexH {
                h_net: EnergyNet::Learned(m),
            } => {
                if let Some(l) = m.layers().iter().find(|l| !l.activation.is_convex_admissible()) {
                    return Err(HamiltonianError::Invalid(format!(
                        "convex energy uses activation {:?}; only rehu and kappa are allowed",
                        l.activation
                    )));
                }
                if !m.is_nonnegative_after_first() {
                    return Err(HamiltonianError::Invalid(
                        "convex energy has negative weights after the first layer".into(),
                    ));
                }
            }
            HamiltonianSpec::SymplecticForm { eps, .. } if *eps <= T::zero() => {
                return Err(HamiltonianError::Invalid("symplectic eps must be positive".into()));
            }
            HamiltonianSpec::HigherDimMomentum { rho, .. } if *rho < T::zero() => {
                return Err(HamiltonianError::Invalid("rho must be non-negative".into()));
            }
            _ => {}
        }
        Ok(dims)
    }

    fn nets(&self) -> Vec<(&'static str, &MlpParams<T>)> {
        let mut out = Vec::new();
        let (h, m, f, h1, h2) = match self {
            HamiltonianSpec::GeodesicMetric { h_net, .. } => (None, Some(h_net), None, None, None),
            HamiltonianSpec::GeodesicRelaxed { h_net, f_net, .. } => (None, Some(h_net), Some(f_net), None, None),
            HamiltonianSpec::FlexibleH { h_net } | HamiltonianSpec::ConvexH { h_net } => {
                (Some(h_net), None, None, None, None)
            }
            HamiltonianSpec::RelaxedH { h_net, f_net } | HamiltonianSpec::SymplecticForm { h_net, f_net, .. } => {
                (Some(h_net), None, Some(f_net), None, None)
            }
            HamiltonianSpec::HigherDimMomentum { h1_net, h2_net, .. } => (None, None, None, Some(h1_net), Some(h2_net)),
            HamiltonianSpec::VanillaOde { f_net } => (None, None, Some(f_net), None, None),
        };
        if let Some(EnergyNet::Learned(net)) = h {
            out.push(("H", net));
        }
        if let Some(MetricNet::Learned(net)) = m {
            out.push(("g", net));
        }
        if let Some(net) = f {
            out.push(("f", net));
        }
        if let Some(net) = h1 {
            out.push(("h1", net));
        }
        if let Some(net) = h2 {
            out.push(("h2", net));
        }
        out
    }

    fn nets_mut(&mut self) -> Vec<&mut MlpParams<T>> {
        let mut out = Vec::new();
        match self {
            HamiltonianSpec::GeodesicMetric { h_net, .. } => {
                if let MetricNet::Learned(n) = h_net {
                    out.push(n);
                }
            }
            HamiltonianSpec::GeodesicRelaxed { h_net, f_net, .. } => {
                if let MetricNet::Learned(n) = h_net {
                    out.push(n);
                }
                out.push(f_net);
            }
            HamiltonianSpec::FlexibleH { h_net } | HamiltonianSpec::ConvexH { h_net } => {
                if let EnergyNet::Learned(n) = h_net {
                    out.push(n);
                }
            }
            HamiltonianSpec::RelaxedH { h_net, f_net } | HamiltonianSpec::SymplecticForm { h_net, f_net, .. } => {
                if let EnergyNet::Learned(n) = h_net {
                    out.push(n);
                }
                out.push(f_net);
            }
            HamiltonianSpec::HigherDimMomentum { h1_net, h2_net, .. } => {
                out.push(h1_net);
                out.push(h2_net);
            }
            HamiltonianSpec::VanillaOde { f_net } => out.push(f_net),
        }
        out
    }

    /// Parameter tensors in binding order.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        self.nets()
            .into_iter()
            .flat_map(|(tag, net)| net.named_tensors(&format!("{prefix}.{tag}")))
            .collect()
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.nets_mut().into_iter().flat_map(MlpParams::tensors_mut).collect()
    }

    /// Turns the parameters into graph nodes.
    pub fn bind(&self, binder: &mut Binder<T>, prefix: &str) -> Result<BoundField<T>, HamiltonianError> {
        let (d, k) = self.validate()?;
        let nets = self.nets();
        let mut vars = nets
            .iter()
            .map(|(tag, net)| net.bind(binder, &format!("{prefix}.{tag}")))
            .collect::<Vec<_>>()
            .into_iter();
        let mut next = || vars.next().expect("one bound network per parameter set");
        let energy = |net: &EnergyNet<T>, next: &mut dyn FnMut() -> MlpVars<T>| match net {
            EnergyNet::Learned(_) => BoundEnergy::Learned(next()),
            EnergyNet::Quadratic => BoundEnergy::Quadratic,
        };
        let metric = |net: &MetricNet<T>, next: &mut dyn FnMut() -> MlpVars<T>| match net {
            MetricNet::Learned(_) => BoundMetric::Learned(next()),
            MetricNet::Constant(v) => BoundMetric::Constant(v.clone()),
            MetricNet::Analytic(f) => BoundMetric::Analytic(*f),
        };
        let kind = match self {
            HamiltonianSpec::GeodesicMetric { h_net, signature } => BoundKind::Geodesic {
                metric: metric(h_net, &mut next),
                signs: signature.signs(),
                bias: None,
            },
            HamiltonianSpec::GeodesicRelaxed { h_net, signature, .. } => BoundKind::Geodesic {
                metric: metric(h_net, &mut next),
                signs: signature.signs(),
                bias: Some(next()),
            },
            HamiltonianSpec::FlexibleH { h_net } | HamiltonianSpec::ConvexH { h_net } => BoundKind::Energy {
                energy: energy(h_net, &mut next),
                bias: None,
                one_form: None,
            },
            HamiltonianSpec::RelaxedH { h_net, .. } => BoundKind::Energy {
                energy: energy(h_net, &mut next),
                bias: Some(next()),
                one_form: None,
            },
            HamiltonianSpec::SymplecticForm { h_net, eps, .. } => BoundKind::Energy {
                energy: energy(h_net, &mut next),
                bias: None,
                one_form: Some((next(), *eps)),
            },
            HamiltonianSpec::HigherDimMomentum { rho, phi, .. } => BoundKind::HigherDim {
                h1: next(),
                h2: next(),
                rho: *rho,
                phi: *phi,
            },
            HamiltonianSpec::VanillaOde { .. } => BoundKind::Vanilla { f: next() },
        };
        Ok(BoundField {
            kind,
            variant: self.kind(),
            d,
            k,
        })
    }

    fn bind_frozen(&self) -> Result<BoundField<T>, HamiltonianError> {
        self.bind(&mut Binder::frozen(), "field")
    }
}

#[derive(Clone, Debug)]
enum BoundEnergy<T> {
    Learned(MlpVars<T>),
    Quadratic,
}

#[derive(Clone, Debug)]
enum BoundMetric<T> {
    Learned(MlpVars<T>),
    Constant(Vec<T>),
    Analytic(fn(&Expr<T>) -> Expr<T>),
}

#[derive(Clone, Debug)]
enum BoundKind<T> {
    Geodesic {
        metric: BoundMetric<T>,
        signs: Vec<T>,
        bias: Option<MlpVars<T>>,
    },
    Energy {
        energy: BoundEnergy<T>,
        bias: Option<MlpVars<T>>,
        one_form: Option<(MlpVars<T>, T)>,
    },
    HigherDim {
        h1: MlpVars<T>,
        h2: MlpVars<T>,
        rho: T,
        phi: Activation,
    },
    Vanilla {
        f: MlpVars<T>,
    },
}

/// A field whose parameters are graph nodes; builds energies and velocities
/// for a batch of states.
#[derive(Clone, Debug)]
pub struct BoundField<T> {
    kind: BoundKind<T>,
    variant: VariantKind,
    d: usize,
    k: usize,
}

/// The canonical skew matrix `[[0, -I], [I, 0]]` of the one-form `p_i dq^i`
/// under `W_ab = d_a f_b - d_b f_a`, repeated for `n` batch elements.
pub fn canonical_form<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let m = 2 * d;
    let mut data = vec![T::zero(); n * m * m];
    for b in 0..n {
        for i in 0..d {
            data[b * m * m + i * m + d + i] = -T::one();
            data[b * m * m + (d + i) * m + i] = T::one();
        }
    }
    Tensor::from_raw(vec![n, m, m], data)
}

impl<T: Real> BoundField<T> {
    pub fn variant(&self) -> VariantKind {
        self.variant
    }

    /// Inverse metric diagonal `[n, d]` at positions `q: [n, d]`.
    pub fn metric_inverse(&self, q: &Expr<T>) -> Option<Expr<T>> {
        let BoundKind::Geodesic { metric, signs, .. } = &self.kind else {
            return None;
        };
        let n = q.shape()[0];
        let magnitude = match metric {
            BoundMetric::Learned(h) => h.apply(q).sigmoid().offset(T::lit(METRIC_FLOOR)),
            BoundMetric::Constant(v) => Expr::constant(Tensor::from_raw(vec![v.len()], v.clone())).broadcast_rows(n),
            BoundMetric::Analytic(f) => f(q),
        };
        let sign = Expr::constant(Tensor::from_raw(vec![signs.len()], signs.clone())).broadcast_rows(n);
        Some(sign.mul(&magnitude))
    }

    /// Per-node energy `[n]`.
    pub fn energy(&self, q: &Expr<T>, p: &Expr<T>) -> Result<Expr<T>, HamiltonianError> {
        let half = T::lit(0.5);
        match &self.kind {
            BoundKind::Geodesic { .. } => {
                let g = self.metric_inverse(q).expect("geodesic field has a metric");
                Ok(g.mul(&p.square()).sum_cols().scale(half))
            }
            BoundKind::Energy { energy, .. } => Ok(match energy {
                BoundEnergy::Learned(net) => {
                    let n = q.shape()[0];
                    net.apply(&q.concat_cols(p)).reshape(&[n])
                }
                BoundEnergy::Quadratic => q.square().sum_cols().add(&p.square().sum_cols()).scale(half),
            }),
            BoundKind::HigherDim { .. } | BoundKind::Vanilla { .. } => {
                Err(HamiltonianError::NoHamiltonian(self.variant))
            }
        }
    }

    /// Skew matrix `W_ab = d_a f_b - d_b f_a` at states `z: [n, 2d]`, shape `[n, 2d, 2d]`.
    pub fn symplectic_matrix(&self, z: &Expr<T>) -> Result<Option<Expr<T>>, HamiltonianError> {
        let BoundKind::Energy {
            one_form: Some((f, _)), ..
        } = &self.kind
        else {
            return Ok(None);
        };
        let out = f.apply(z);
        let rows = (0..out.shape()[1])
            .map(|b| engine::grad(&out.slice_cols(b, 1).sum(), z))
            .collect::<Result<Vec<_>, _>>()?;
        // jac[n][b][a] = d_a f_b
        let jac = Expr::stack(&rows);
        Ok(Some(jac.batch_t().sub(&jac)))
    }
}

impl<T: Real> VectorField<T> for BoundField<T> {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.k)
    }

    fn velocity(&self, z: &Expr<T>) -> Result<Expr<T>, HamiltonianError> {
        let (d, k) = (self.d, self.k);
        if z.shape().len() != 2 || z.shape()[1] != d + k {
            return Err(HamiltonianError::Dimension(format!(
                "state {:?} does not match field dimensions ({d}, {k})",
                z.shape()
            )));
        }
        let n = z.shape()[0];
        let q = z.slice_cols(0, d);
        match &self.kind {
            BoundKind::Vanilla { f } => Ok(f.apply(&q)),
            BoundKind::HigherDim { h1, h2, rho, phi } => {
                let p = z.slice_cols(d, k);
                let dq = phi.apply(&h1.apply(&p).sub(&q.scale(*rho)));
                let dp = phi.apply(&h2.apply(&q).sub(&p.scale(*rho)));
                Ok(dq.concat_cols(&dp))
            }
            BoundKind::Geodesic { bias, .. } | BoundKind::Energy { bias, .. } => {
                let p = z.slice_cols(d, k);
                let total = self.energy(&q, &p)?.sum();
                let grad_z = engine::grad(&total, z)?;
                if let Some(w) = self.symplectic_matrix(z)? {
                    let BoundKind::Energy {
                        one_form: Some((_, eps)),
                        ..
                    } = &self.kind
                    else {
                        unreachable!()
                    };
                    let reg = Expr::constant(canonical_form::<T>(n, d)).scale(*eps);
                    return Ok(w.add(&reg).batch_solve(&grad_z));
                }
                let dq = grad_z.slice_cols(d, d);
                let mut dp = grad_z.slice_cols(0, d).neg();
                if let Some(f) = bias {
                    dp = dp.add(&f.apply(&q));
                }
                Ok(dq.concat_cols(&dp))
            }
        }
    }
}

fn single_state<T: Real>(state: &PhaseState<T>, d: usize, k: usize) -> Result<Tensor<T>, HamiltonianError> {
    if state.q.len() != d || state.p.len() != k {
        return Err(HamiltonianError::Dimension(format!(
            "state has q: {}, p: {} but field needs q: {d}, p: {k}",
            state.q.len(),
            state.p.len()
        )));
    }
    Ok(state.to_row())
}

/// Inverse metric diagonal at `q`.
pub fn metric_inverse_diag<T: Real>(spec: &HamiltonianSpec<T>, q: &Tensor<T>) -> Result<Tensor<T>, HamiltonianError> {
    let field = spec.bind_frozen()?;
    if q.len() != field.d {
        return Err(HamiltonianError::Dimension(format!(
            "q has {} entries, metric needs {}",
            q.len(),
            field.d
        )));
    }
    let qe = Expr::constant(q.reshape(&[1, field.d])?);
    let g = field
        .metric_inverse(&qe)
        .ok_or_else(|| HamiltonianError::Invalid(format!("variant {} has no metric", spec.kind())))?;
    Ok(engine::forward(&g, &engine::Bindings::new())?.reshape(&[field.d])?)
}

/// Energy `H(q, p)` of one state.
pub fn eval_hamiltonian<T: Real>(spec: &HamiltonianSpec<T>, state: &PhaseState<T>) -> Result<T, HamiltonianError> {
    if !spec.kind().has_hamiltonian() {
        return Err(HamiltonianError::NoHamiltonian(spec.kind()));
    }
    let field = spec.bind_frozen()?;
    let z = single_state(state, field.d, field.k)?;
    Ok(eval_energy_rows(&field, &z)?.item())
}

/// Per-row energies of a batch `[n, d + k]` of states.
pub fn eval_energy_rows<T: Real>(field: &BoundField<T>, z: &Tensor<T>) -> Result<Tensor<T>, HamiltonianError> {
    let (d, k) = (field.d, field.k);
    let ze = Expr::constant(z.clone());
    let h = field.energy(&ze.slice_cols(0, d), &ze.slice_cols(d, k))?;
    Ok(engine::forward(&h, &engine::Bindings::new())?)
}

/// Energies of a batch of states `[n, d + k]` under `spec`.
pub fn eval_hamiltonian_batch<T: Real>(
    spec: &HamiltonianSpec<T>,
    z: &Tensor<T>,
) -> Result<Tensor<T>, HamiltonianError> {
    eval_energy_rows(&spec.bind_frozen()?, z)
}

/// Time derivative `(dq, dp)` of one state.
pub fn phase_velocity<T: Real>(
    spec: &HamiltonianSpec<T>,
    state: &PhaseState<T>,
) -> Result<(Tensor<T>, Tensor<T>), HamiltonianError> {
    let field = spec.bind_frozen()?;
    let z = single_state(state, field.d, field.k)?;
    let v = phase_velocity_batch_bound(&field, &z)?;
    let row = PhaseState::from_row(v.data(), field.d);
    Ok((row.q, row.p))
}

/// Velocities `[n, d + k]` of a batch of states.
pub fn phase_velocity_batch<T: Real>(spec: &HamiltonianSpec<T>, z: &Tensor<T>) -> Result<Tensor<T>, HamiltonianError> {
    phase_velocity_batch_bound(&spec.bind_frozen()?, z)
}

fn phase_velocity_batch_bound<T: Real>(field: &BoundField<T>, z: &Tensor<T>) -> Result<Tensor<T>, HamiltonianError> {
    let leaf = Expr::leaf("z", z.shape());
    let v = field.velocity(&leaf)?;
    Ok(Program::new(&[v])
        .run(&engine::Bindings::new().with(&leaf, z.clone()))?
        .remove(0))
}

/// The skew matrix of the learned one-form at one state, `[2d, 2d]`.
pub fn assemble_w<T: Real>(spec: &HamiltonianSpec<T>, state: &PhaseState<T>) -> Result<Tensor<T>, HamiltonianError> {
    let field = spec.bind_frozen()?;
    let z = single_state(state, field.d, field.k)?;
    let leaf = Expr::leaf("z", z.shape());
    let w = field
        .symplectic_matrix(&leaf)?
        .ok_or_else(|| HamiltonianError::Invalid(format!("variant {} has no one-form", spec.kind())))?;
    let m = 2 * field.d;
    Ok(engine::forward(&w, &engine::Bindings::new().with(&leaf, z))?.reshape(&[m, m])?)
}

/// Clamps the convex energy's weights from layer two on to be non-negative.
pub fn project_convex<T: Real>(spec: &mut HamiltonianSpec<T>) {
    if let HamiltonianSpec::ConvexH {
        h_net: EnergyNet::Learned(net),
    } = spec
    {
        net.clamp_nonnegative_after_first();
    }
}
