//! Numerical self-checks of one field variant.

use anyhow::Context;
use hamgnn::engine::{forward, grad, Binder, Bindings, Expr, Program, Tensor};
use hamgnn::graphdata::{synth_dataset, SynthKind};
use hamgnn::hamiltonian::{
    assemble_w, canonical_form, eval_hamiltonian_batch, phase_velocity_batch, FieldOptions, HamiltonianSpec,
    PhaseState, Signature, VariantKind,
};
use hamgnn::model::{ModelConfig, ModelKind, ModelParams};
use hamgnn::odeint::{energy_drift, integrate, IntegrationConfig, Method, VectorField};
use hamgnn::train::{gradient_check, jitter_biases};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VELOCITY_TOL: f64 = 1e-5;
pub const JACOBIAN_TOL: f64 = 1e-5;
pub const DRIFT_TOL: f64 = 1e-3;
pub const EULER_RATIO: (f64, f64) = (1.8, 2.2);
pub const MODEL_GRAD_TOL: f64 = 1e-4;
/// Euler drift below this is roundoff and carries no order information.
const DRIFT_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
    pub note: Option<String>,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("<= {bound:e}"),
            passed: value <= bound,
            note: None,
        }
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("{status} {:<16} {:.3e} ({})", self.name, self.value, self.bound);
        if let Some(n) = &self.note {
            s.push_str(&format!(" [{n}]"));
        }
        s
    }
}

fn random_states(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Tensor<f64> {
    let data = (0..n * width).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(&[n, width], data).expect("shape matches data")
}

pub fn init_spec(kind: VariantKind, d: usize, rng: &mut ChaCha8Rng) -> HamiltonianSpec<f64> {
    let mut opts = FieldOptions::new(d);
    opts.signature = Signature { r: d / 2, s: d - d / 2 };
    HamiltonianSpec::init(kind, &opts, rng)
}

/// Batch central differences of the per-row scalar `f`, one column at a time.
fn fd_rows(
    z: &Tensor<f64>,
    h: f64,
    f: impl Fn(&Tensor<f64>) -> anyhow::Result<Tensor<f64>>,
) -> anyhow::Result<Tensor<f64>> {
    let (n, w) = (z.shape()[0], z.shape()[1]);
    let mut out = vec![0.0; n * w];
    for c in 0..w {
        let shifted = |delta: f64| {
            let mut t = z.clone();
            for r in 0..n {
                t.data_mut()[r * w + c] += delta;
            }
            f(&t)
        };
        let (plus, minus) = (shifted(h)?, shifted(-h)?);
        for r in 0..n {
            out[r * w + c] = (plus.data()[r] - minus.data()[r]) / (2.0 * h);
        }
    }
    Ok(Tensor::new(&[n, w], out)?)
}

fn bias_rows(spec: &HamiltonianSpec<f64>, z: &Tensor<f64>, d: usize) -> anyhow::Result<Option<Tensor<f64>>> {
    let f = match spec {
        HamiltonianSpec::RelaxedH { f_net, .. } | HamiltonianSpec::GeodesicRelaxed { f_net, .. } => f_net,
        _ => return Ok(None),
    };
    let vars = f.bind(&mut Binder::frozen(), "f");
    let q = Expr::constant(z.clone()).slice_cols(0, d);
    Ok(Some(forward(&vars.apply(&q), &Bindings::new())?))
}

fn row_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().chain(a).fold(1e-8f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Worst per-state relative error between the field and the canonical
/// equations built from finite differences of the energy. For the learned
/// one-form the check is `(W + eps J) v = grad H`.
pub fn velocity_error(spec: &HamiltonianSpec<f64>, z: &Tensor<f64>) -> anyhow::Result<f64> {
    let (d, _) = spec.dims()?;
    let v = phase_velocity_batch(spec, z)?;
    let g = fd_rows(z, 1e-5, |t| Ok(eval_hamiltonian_batch(spec, t)?))?;
    let bias = bias_rows(spec, z, d)?;
    let mut worst = 0.0f64;
    for r in 0..z.shape()[0] {
        let err = if let HamiltonianSpec::SymplecticForm { eps, .. } = spec {
            let w = assemble_w(spec, &PhaseState::from_row(z.row(r), d))?;
            let j = canonical_form::<f64>(1, d);
            let m = 2 * d;
            let lhs: Vec<f64> = (0..m)
                .map(|a| {
                    (0..m)
                        .map(|b| (w.at(a, b) + eps * j.data()[a * m + b]) * v.row(r)[b])
                        .sum()
                })
                .collect();
            row_error(&lhs, g.row(r))
        } else {
            let mut expected: Vec<f64> = g.row(r)[d..].to_vec();
            for j in 0..d {
                let b = bias.as_ref().map_or(0.0, |b| b.at(r, j));
                expected.push(-g.at(r, j) + b);
            }
            row_error(v.row(r), &expected)
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Reverse-mode gradient of `sum(v * c)` with respect to the state against
/// central differences of the field itself.
pub fn jacobian_error(spec: &HamiltonianSpec<f64>, z: &Tensor<f64>, rng: &mut ChaCha8Rng) -> anyhow::Result<f64> {
    let shape = z.shape().to_vec();
    let weights = random_states(rng, shape[0], shape[1]);
    let field = spec.bind(&mut Binder::frozen(), "field")?;
    let leaf = Expr::leaf("z", &shape);
    let objective = field.velocity(&leaf)?.mul(&Expr::constant(weights.clone())).sum_cols();
    let analytic = Program::new(&[grad(&objective.sum(), &leaf)?])
        .run(&Bindings::new().with(&leaf, z.clone()))?
        .remove(0);
    let numeric = fd_rows(z, 1e-5, |t| {
        let v = phase_velocity_batch(spec, t)?;
        let w = shape[1];
        let rows = (0..shape[0])
            .map(|r| {
                v.row(r)
                    .iter()
                    .zip(&weights.data()[r * w..(r + 1) * w])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(Tensor::new(&[shape[0]], rows)?)
    })?;
    Ok(row_error(analytic.data(), numeric.data()))
}

pub struct DriftReport {
    pub rk4_relative: f64,
    pub euler_coarse: f64,
    pub euler_fine: f64,
}

impl DriftReport {
    pub fn ratio(&self) -> f64 {
        self.euler_coarse / self.euler_fine
    }

    pub fn ratio_check(&self) -> Check {
        let (lo, hi) = EULER_RATIO;
        let bound = format!("in [{lo}, {hi}]");
        if self.euler_coarse < DRIFT_FLOOR {
            return Check {
                name: "euler_ratio".into(),
                value: self.euler_coarse,
                bound,
                passed: self.euler_fine < DRIFT_FLOOR,
                note: Some("drift at roundoff, order not measurable".into()),
            };
        }
        let r = self.ratio();
        Check {
            name: "euler_ratio".into(),
            value: r,
            bound,
            passed: (lo..=hi).contains(&r),
            note: None,
        }
    }
}

/// RK4 drift over `T = 1, h = 0.01` and the Euler drift at `h = 0.01` and
/// `h = 0.005`.
pub fn drift(spec: &HamiltonianSpec<f64>, z0: &Tensor<f64>) -> anyhow::Result<DriftReport> {
    let field = spec.bind(&mut Binder::frozen(), "field")?;
    let run = |method, h| -> anyhow::Result<_> {
        let t = integrate(&field, z0, &IntegrationConfig::new(method, 1.0, h))?;
        Ok(energy_drift(spec, &t)?)
    };
    Ok(DriftReport {
        rk4_relative: run(Method::Rk4, 0.01)?.relative,
        euler_coarse: run(Method::Euler, 0.01)?.max_abs,
        euler_fine: run(Method::Euler, 0.005)?.max_abs,
    })
}

pub fn model_kind(kind: VariantKind) -> ModelKind {
    serde_json::from_value(serde_json::Value::String(kind.name().into())).expect("every field variant is a model kind")
}

/// Largest per-tensor error of the classification-loss gradient on an
/// eight-node graph with one layer of two Euler steps.
pub fn model_gradient_error(kind: ModelKind, d: usize, seed: u64) -> anyhow::Result<(String, f64)> {
    let ds = synth_dataset(
        &SynthKind::Sbm {
            sizes: vec![4, 4],
            p_in: 0.8,
            p_out: 0.2,
        },
        seed,
    )?;
    let cfg = ModelConfig {
        hidden: d,
        layers: 1,
        variant: kind,
        integration: IntegrationConfig::new(Method::Euler, 1.0, 0.5),
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<f64>::init(&cfg, ds.num_features(), ds.num_classes, &mut rng)?;
    jitter_biases(&mut params, &mut rng);
    let checks = gradient_check(&cfg, &params, &ds, 1e-6)?;
    let worst = checks
        .into_iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .context("model has no parameters")?;
    Ok((worst.name, worst.rel_error))
}

/// Runs every check that applies to `kind` at dimension `d`.
pub fn run_suite(kind: VariantKind, d: usize, seed: u64) -> anyhow::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = init_spec(kind, d, &mut rng);
    let (q, k) = spec.dims()?;
    let z = random_states(&mut rng, 100, q + k);
    let mut out = Vec::new();
    if kind.has_hamiltonian() {
        out.push(Check::at_most("velocity", velocity_error(&spec, &z)?, VELOCITY_TOL));
    }
    out.push(Check::at_most(
        "field_jacobian",
        jacobian_error(&spec, &z, &mut rng)?,
        JACOBIAN_TOL,
    ));
    let conservative = kind.has_hamiltonian() && !matches!(kind, VariantKind::Relaxed | VariantKind::GeodesicRelaxed);
    if conservative {
        let z0 = random_states(&mut rng, 10, q + k);
        let r = drift(&spec, &z0)?;
        out.push(Check::at_most("rk4_drift", r.rk4_relative, DRIFT_TOL));
        out.push(r.ratio_check());
    }
    let (tensor, err) = model_gradient_error(model_kind(kind), d, seed)?;
    let mut c = Check::at_most("model_gradient", err, MODEL_GRAD_TOL);
    c.note = Some(format!("worst tensor {tensor}"));
    out.push(c);
    Ok(out)
}
