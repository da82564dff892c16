//! Fixed-step explicit integration of phase-space fields.
//!
//! [`integrate_expr`] unrolls the solver into engine graph nodes so that
//! gradients reach the field parameters and the initial state.
//! [`integrate`] evaluates a trajectory numerically, compiling a single
//! step once and reusing it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Bindings, EngineError, Expr, Program, Real, Tensor};
use crate::hamiltonian::{self, HamiltonianError, HamiltonianSpec, MetricNet, Signature};

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("invalid integration config: {0}")]
    Config(String),
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error(transparent)]
    Field(#[from] HamiltonianError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Right-hand side of an autonomous ODE on batched states `[n, d + k]`.
pub trait VectorField<T: Real> {
    /// `(d, k)`: position and momentum widths of a state row.
    fn dims(&self) -> (usize, usize);

    fn velocity(&self, z: &Expr<T>) -> Result<Expr<T>, HamiltonianError>;
}

impl<T: Real, F: VectorField<T> + ?Sized> VectorField<T> for &F {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }

    fn velocity(&self, z: &Expr<T>) -> Result<Expr<T>, HamiltonianError> {
        (**self).velocity(z)
    }
}

/// The field with its sign flipped, i.e. time running backwards.
pub struct Reversed<F>(pub F);

impl<T: Real, F: VectorField<T>> VectorField<T> for Reversed<F> {
    fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn velocity(&self, z: &Expr<T>) -> Result<Expr<T>, HamiltonianError> {
        Ok(self.0.velocity(z)?.neg())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub method: Method,
    pub horizon: f64,
    pub step: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            method: Method::Euler,
            horizon: 1.0,
            step: 0.5,
        }
    }
}

/// Step count and the step actually used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub steps: usize,
    pub step: f64,
    /// Set when `horizon / step` was not an integer and the step was changed.
    pub adjusted: bool,
}

impl IntegrationConfig {
    pub fn new(method: Method, horizon: f64, step: f64) -> Self {
        Self { method, horizon, step }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(OdeError::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(OdeError::Config(format!("step must be positive, got {}", self.step)));
        }
        if self.step > self.horizon * (1.0 + 1e-12) {
            return Err(OdeError::Config(format!(
                "step {} exceeds horizon {}",
                self.step, self.horizon
            )));
        }
        Ok(())
    }

    /// Rounds `horizon / step` to the nearest positive integer.
    pub fn plan(&self) -> Result<StepPlan, OdeError> {
        self.validate()?;
        let ratio = self.horizon / self.step;
        let steps = (ratio.round() as usize).max(1);
        let step = self.horizon / steps as f64;
        let adjusted = (ratio - steps as f64).abs() > 1e-9 * ratio.max(1.0);
        if adjusted {
            log::warn!(
                "horizon {} is not a multiple of step {}; using {} steps of {}",
                self.horizon,
                self.step,
                steps,
                step
            );
        }
        Ok(StepPlan { steps, step, adjusted })
    }
}

/// One explicit step of size `h` from `z`.
pub fn step_expr<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    z: &Expr<T>,
    method: Method,
    h: T,
) -> Result<Expr<T>, OdeError> {
    Ok(match method {
        Method::Euler => z.add(&field.velocity(z)?.scale(h)),
        Method::Rk4 => {
            let half = h * T::lit(0.5);
            let k1 = field.velocity(z)?;
            let k2 = field.velocity(&z.add(&k1.scale(half)))?;
            let k3 = field.velocity(&z.add(&k2.scale(half)))?;
            let k4 = field.velocity(&z.add(&k3.scale(h)))?;
            let two = T::lit(2.0);
            let incr = k1.add(&k2.scale(two)).add(&k3.scale(two)).add(&k4);
            z.add(&incr.scale(h / T::lit(6.0)))
        }
    })
}

fn check_state_shape<T: Real, F: VectorField<T> + ?Sized>(field: &F, shape: &[usize]) -> Result<(), OdeError> {
    let (d, k) = field.dims();
    if shape.len() != 2 || shape[1] != d + k {
        return Err(
            HamiltonianError::Dimension(format!("state {shape:?} does not match field dimensions ({d}, {k})")).into(),
        );
    }
    Ok(())
}

/// Unrolled solver graph: the states at `t = 0, h, .., T`.
pub fn integrate_expr<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    z0: &Expr<T>,
    cfg: &IntegrationConfig,
) -> Result<Vec<Expr<T>>, OdeError> {
    check_state_shape(field, z0.shape())?;
    let plan = cfg.plan()?;
    let h = T::lit(plan.step);
    let mut states = Vec::with_capacity(plan.steps + 1);
    states.push(z0.clone());
    for _ in 0..plan.steps {
        let next = step_expr(field, states.last().expect("non-empty"), cfg.method, h)?;
        states.push(next);
    }
    Ok(states)
}

/// Evaluated states at `t = 0, h, .., T`, each `[n, d + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Tensor<T>>,
    pub step: f64,
    pub d: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &Tensor<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position columns of one node along the trajectory.
    pub fn positions(&self, node: usize) -> Vec<Vec<T>> {
        self.states.iter().map(|s| s.row(node)[..self.d].to_vec()).collect()
    }
}

pub fn integrate<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    z0: &Tensor<T>,
    cfg: &IntegrationConfig,
) -> Result<Trajectory<T>, OdeError> {
    check_state_shape(field, z0.shape())?;
    if !z0.is_finite() {
        return Err(OdeError::NonFiniteState { step: 0 });
    }
    let plan = cfg.plan()?;
    let leaf = Expr::leaf("z", z0.shape());
    let next = step_expr(field, &leaf, cfg.method, T::lit(plan.step))?;
    let program = Program::new(&[next]);
    let mut states = Vec::with_capacity(plan.steps + 1);
    states.push(z0.clone());
    for step in 1..=plan.steps {
        let bindings = Bindings::new().with(&leaf, states[step - 1].clone());
        let z = match program.run(&bindings) {
            Ok(mut v) => v.remove(0),
            Err(EngineError::NonFiniteNode { .. }) => return Err(OdeError::NonFiniteState { step }),
            Err(e) => return Err(e.into()),
        };
        states.push(z);
    }
    Ok(Trajectory {
        states,
        step: plan.step,
        d: field.dims().0,
    })
}

/// Integrates a single phase-space state under `spec`.
pub fn integrate_state<T: Real>(
    spec: &HamiltonianSpec<T>,
    state0: &hamiltonian::PhaseState<T>,
    cfg: &IntegrationConfig,
) -> Result<Trajectory<T>, OdeError> {
    let field = spec.bind(&mut crate::engine::Binder::frozen(), "field")?;
    integrate(&field, &state0.to_row(), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyDrift {
    pub max_abs: f64,
    /// `max |H(t) - H(0)| / |H(0)|`, with `|H(0)| = 0` replaced by 1.
    pub relative: f64,
}

pub fn energy_drift<T: Real>(spec: &HamiltonianSpec<T>, traj: &Trajectory<T>) -> Result<EnergyDrift, HamiltonianError> {
    if !spec.kind().has_hamiltonian() {
        return Err(HamiltonianError::NoHamiltonian(spec.kind()));
    }
    let energies = traj
        .states
        .iter()
        .map(|z| hamiltonian::eval_hamiltonian_batch(spec, z))
        .collect::<Result<Vec<_>, _>>()?;
    let h0 = &energies[0];
    let mut max_abs = 0.0f64;
    let mut relative = 0.0f64;
    for h in &energies[1..] {
        for (a, b) in h.data().iter().zip(h0.data()) {
            let dev = (a.as_f64() - b.as_f64()).abs();
            let scale = if b.as_f64() == 0.0 { 1.0 } else { b.as_f64().abs() };
            max_abs = max_abs.max(dev);
            relative = relative.max(dev / scale);
        }
    }
    Ok(EnergyDrift { max_abs, relative })
}

/// A diagonal metric known in closed form.
pub trait AnalyticMetric {
    fn dim(&self) -> usize;

    /// Graph of the inverse metric diagonal, `[n, d] -> [n, d]`.
    fn inverse_expr(&self) -> fn(&Expr<f64>) -> Expr<f64>;

    /// Diagonal `g_ii(q)`.
    fn metric(&self, q: &[f64]) -> Vec<f64>;

    /// `dg[i][k] = d g_ii / d q^k`.
    fn metric_derivative(&self, q: &[f64]) -> Vec<Vec<f64>>;

    /// `gamma[i][j][k]`, Christoffel symbols of the second kind.
    fn christoffel(&self, q: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let d = self.dim();
        let g = self.metric(q);
        let dg = self.metric_derivative(q);
        // partial_k g_ij for a diagonal metric
        let dmet = |i: usize, j: usize, k: usize| if i == j { dg[i][k] } else { 0.0 };
        let mut gamma = vec![vec![vec![0.0; d]; d]; d];
        for (i, gi) in gamma.iter_mut().enumerate() {
            for (j, gij) in gi.iter_mut().enumerate() {
                for (k, v) in gij.iter_mut().enumerate() {
                    *v = 0.5 / g[i] * (dmet(i, k, j) + dmet(i, j, k) - dmet(j, k, i));
                }
            }
        }
        gamma
    }
}

/// The Euclidean metric.
pub struct IdentityMetric(pub usize);

fn identity_inverse(q: &Expr<f64>) -> Expr<f64> {
    q.scale(0.0).offset(1.0)
}

impl AnalyticMetric for IdentityMetric {
    fn dim(&self) -> usize {
        self.0
    }

    fn inverse_expr(&self) -> fn(&Expr<f64>) -> Expr<f64> {
        identity_inverse
    }

    fn metric(&self, _q: &[f64]) -> Vec<f64> {
        vec![1.0; self.0]
    }

    fn metric_derivative(&self, _q: &[f64]) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.0]; self.0]
    }
}

/// Poincare half-plane `g = y^-2 I` on `(x, y)`, `y > 0`.
pub struct HalfPlaneMetric;

fn half_plane_inverse(q: &Expr<f64>) -> Expr<f64> {
    let y2 = q.slice_cols(1, 1).square();
    y2.concat_cols(&y2)
}

impl AnalyticMetric for HalfPlaneMetric {
    fn dim(&self) -> usize {
        2
    }

    fn inverse_expr(&self) -> fn(&Expr<f64>) -> Expr<f64> {
        half_plane_inverse
    }

    fn metric(&self, q: &[f64]) -> Vec<f64> {
        let g = 1.0 / (q[1] * q[1]);
        vec![g, g]
    }

    fn metric_derivative(&self, q: &[f64]) -> Vec<Vec<f64>> {
        let dy = -2.0 / (q[1] * q[1] * q[1]);
        vec![vec![0.0, dy], vec![0.0, dy]]
    }
}

/// Cogeodesic field spec with the metric frozen to `metric`.
pub fn analytic_geodesic_spec<M: AnalyticMetric + ?Sized>(metric: &M) -> HamiltonianSpec<f64> {
    HamiltonianSpec::GeodesicMetric {
        h_net: MetricNet::Analytic(metric.inverse_expr()),
        signature: Signature::riemannian(metric.dim()),
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicCheck {
    pub trajectory: Trajectory<f64>,
    /// Largest `|q'' + Gamma(q', q')|` over interior samples.
    pub max_residual: f64,
}

/// Integrates the cogeodesic field of an analytic metric and measures how
/// well the positions satisfy the geodesic equation, using central
/// differences of `q(t)`.
pub fn reference_geodesic_check<M: AnalyticMetric + ?Sized>(
    metric: &M,
    q0: &[f64],
    p0: &[f64],
    cfg: &IntegrationConfig,
) -> Result<GeodesicCheck, OdeError> {
    let spec = analytic_geodesic_spec(metric);
    let state = hamiltonian::PhaseState::from_f64(q0, p0)?;
    let trajectory = integrate_state(&spec, &state, cfg)?;
    let qs = trajectory.positions(0);
    let h = trajectory.step;
    let d = metric.dim();
    let mut max_residual = 0.0f64;
    for w in qs.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let vel: Vec<f64> = (0..d).map(|i| (c[i] - a[i]) / (2.0 * h)).collect();
        let gamma = metric.christoffel(b);
        for i in 0..d {
            let acc = (c[i] - 2.0 * b[i] + a[i]) / (h * h);
            let mut quad = 0.0;
            for j in 0..d {
                for k in 0..d {
                    quad += gamma[i][j][k] * vel[j] * vel[k];
                }
            }
            max_residual = max_residual.max((acc + quad).abs());
        }
    }
    Ok(GeodesicCheck {
        trajectory,
        max_residual,
    })
}
