//! Losses, the Adam optimizer and the full-batch training loop.

mod adam;
mod metrics;
mod report;

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{grads_or_zero, Binder, Bindings, EngineError, Expr, Program, Real, SparseOp, Tensor};
use crate::graphdata::{DataError, GraphDataset, LinkSplit};
use crate::model::{
    self, aggregation_matrix, link_logits, BoundModel, Decoder, GraphInputs, ModelConfig, ModelError, ModelParams,
};

pub use crate::graphdata::negative_sample;
pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use metrics::{accuracy, cross_entropy, cross_entropy_value, link_loss, roc_auc};
pub use report::{read_history_csv, write_history_csv, write_metrics_json, RunMetrics};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        /// Parameters entering the failing epoch.
        last_finite: Box<ModelParams<f64>>,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Link,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Classification => "accuracy",
            Task::Link => "roc_auc",
        }
    }

    pub fn decoder(self) -> Decoder {
        match self {
            Task::Classification => Decoder::Classification,
            Task::Link => Decoder::Link,
        }
    }
}

fn default_lr() -> f64 {
    0.01
}
fn default_weight_decay() -> f64 {
    0.001
}
fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    100
}
fn default_task() -> Task {
    Task::Classification
}
fn default_ratio() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: Task,
    /// Negatives drawn per training edge each epoch.
    #[serde(default = "default_ratio")]
    pub negative_ratio: usize,
    /// When false, tensors named `*.bias` are exempt from weight decay.
    #[serde(default = "default_true")]
    pub decay_biases: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed: 0,
            task: default_task(),
            negative_ratio: default_ratio(),
            decay_biases: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "patience must lie in 1..={}, got {}",
                self.max_epochs, self.patience
            ));
        }
        if self.negative_ratio == 0 {
            return bad("negative_ratio must be at least 1".into());
        }
        Ok(())
    }

    fn decay_factors(&self, names: &[String]) -> Vec<f64> {
        names
            .iter()
            .map(|n| {
                if !self.decay_biases && n.ends_with(".bias") {
                    0.0
                } else {
                    self.weight_decay
                }
            })
            .collect()
    }

    /// Seed of the held-out edge split for link prediction.
    pub fn link_split_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    fn negative_seed(&self, epoch: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test metric of the best-validation epoch.
    pub test_at_best: f64,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    /// Parameters of the best-validation epoch.
    pub params: ModelParams<T>,
    pub history: TrainHistory,
    pub wall_time: f64,
}

fn check_configs(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(), TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if model_cfg.decoder != cfg.task.decoder() {
        return Err(TrainError::Config(format!(
            "task {:?} needs the {:?} decoder",
            cfg.task,
            cfg.task.decoder()
        )));
    }
    Ok(())
}

fn is_non_finite(e: &EngineError) -> bool {
    matches!(e, EngineError::NonFinite(_) | EngineError::NonFiniteNode { .. })
}

fn bindings_for<T: Real>(leaves: &[Expr<T>], params: &ModelParams<T>) -> Bindings<T> {
    let mut b = Bindings::new();
    for (leaf, (_, t)) in leaves.iter().zip(params.named_tensors()) {
        b.bind(leaf, t.clone());
    }
    b
}

struct EpochOutput<T> {
    loss: f64,
    grads: Vec<Tensor<T>>,
    val: f64,
    test: f64,
}

enum Problem<T> {
    Class {
        leaves: Vec<Expr<T>>,
        program: Program<T>,
        labels: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Link {
        inputs: GraphInputs<T>,
        split: LinkSplit,
        forbidden: HashSet<(usize, usize)>,
    },
}

/// Graph inputs whose aggregation only uses the given edges.
pub fn inputs_with_edges<T: Real>(ds: &GraphDataset, edges: &[(usize, usize)]) -> GraphInputs<T> {
    GraphInputs {
        n: ds.n,
        features: ds.features.cast(),
        aggregation: SparseOp::new(aggregation_matrix(ds.n, edges)),
    }
}

/// Parameter leaves, the `[loss, logits, grads...]` program, and the loss.
type ClassProgram<T> = (Vec<Expr<T>>, Program<T>, Expr<T>);

fn class_program<T: Real>(
    model_cfg: &ModelConfig,
    params: &ModelParams<T>,
    g: &GraphInputs<T>,
    labels: &[usize],
    mask: &[usize],
) -> Result<ClassProgram<T>, TrainError> {
    let mut binder = Binder::new();
    let model = BoundModel::new(model_cfg, params, &mut binder)?;
    let logits = model.logits(&model.encode(g)?)?;
    let loss = cross_entropy(&logits, labels, mask)?;
    let (leaves, _) = binder.into_parts();
    let mut outputs = vec![loss.clone(), logits];
    outputs.extend(grads_or_zero(&loss, &leaves)?);
    Ok((leaves, Program::new(&outputs), loss))
}

fn auc_of<T: Real>(z: &Tensor<T>, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<f64, TrainError> {
    let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
    let scores: Vec<f64> = model::decode_link(z, &pairs)?.into_iter().map(Real::as_f64).collect();
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i < pos.len()).collect();
    roc_auc(&scores, &labels)
}

impl<T: Real> Problem<T> {
    fn new(
        model_cfg: &ModelConfig,
        cfg: &TrainConfig,
        params: &ModelParams<T>,
        ds: &GraphDataset,
    ) -> Result<Self, TrainError> {
        match cfg.task {
            Task::Classification => {
                for (name, mask) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
                    if mask.is_empty() {
                        return Err(TrainError::Config(format!("{name} mask is empty")));
                    }
                }
                let g = GraphInputs::new(ds);
                let (leaves, program, _) = class_program(model_cfg, params, &g, &ds.labels, &ds.train)?;
                Ok(Problem::Class {
                    leaves,
                    program,
                    labels: ds.labels.clone(),
                    val: ds.val.clone(),
                    test: ds.test.clone(),
                })
            }
            Task::Link => {
                let split = LinkSplit::new(ds, cfg.link_split_seed())?;
                Ok(Problem::Link {
                    inputs: inputs_with_edges(ds, &split.train),
                    forbidden: split.forbidden_for_training(),
                    split,
                })
            }
        }
    }

    fn run(
        &self,
        model_cfg: &ModelConfig,
        cfg: &TrainConfig,
        params: &ModelParams<T>,
        epoch: usize,
    ) -> Result<EpochOutput<T>, TrainError> {
        match self {
            Problem::Class {
                leaves,
                program,
                labels,
                val,
                test,
            } => {
                let mut out = program.run(&bindings_for(leaves, params))?;
                let grads = out.split_off(2);
                let preds = model::predict(&out[1]);
                Ok(EpochOutput {
                    loss: out[0].item().as_f64(),
                    grads,
                    val: accuracy(&preds, labels, val)?,
                    test: accuracy(&preds, labels, test)?,
                })
            }
            Problem::Link {
                inputs,
                split,
                forbidden,
            } => {
                let count = cfg.negative_ratio * split.train.len();
                let negatives = negative_sample(inputs.n, count, cfg.negative_seed(epoch), forbidden)?;
                let mut binder = Binder::new();
                let model = BoundModel::new(model_cfg, params, &mut binder)?;
                let z = model.encode(inputs)?;
                let loss = link_loss(&link_logits(&z, &split.train)?, &link_logits(&z, &negatives)?);
                let (leaves, bindings) = binder.into_parts();
                let mut outputs = vec![loss.clone(), z];
                outputs.extend(grads_or_zero(&loss, &leaves)?);
                let mut out = Program::new(&outputs).run(&bindings)?;
                let grads = out.split_off(2);
                Ok(EpochOutput {
                    loss: out[0].item().as_f64(),
                    grads,
                    val: auc_of(&out[1], &split.val, &split.val_neg)?,
                    test: auc_of(&out[1], &split.test, &split.test_neg)?,
                })
            }
        }
    }
}

pub fn fit<T: Real>(model_cfg: &ModelConfig, cfg: &TrainConfig, ds: &GraphDataset) -> Result<FitResult<T>, TrainError> {
    fit_observed(model_cfg, cfg, ds, |_, _| {})
}

/// [`fit`] calling `observe` after every optimizer step with the epoch's
/// record and the updated parameters.
pub fn fit_observed<T: Real>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &GraphDataset,
    mut observe: impl FnMut(&EpochRecord, &ModelParams<T>),
) -> Result<FitResult<T>, TrainError> {
    check_configs(model_cfg, cfg)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::<T>::init(model_cfg, ds.num_features(), ds.num_classes, &mut rng)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let decay = cfg.decay_factors(&names);
    let mut state = AdamState::new(params.named_tensors().iter().map(|(_, t)| t.shape()));
    let problem = Problem::new(model_cfg, cfg, &params, ds)?;

    let mut records = Vec::new();
    let mut best: Option<(usize, f64, f64, ModelParams<T>)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let diverged = |loss: f64, params: &ModelParams<T>| -> TrainError {
            match params.cast::<f64>(model_cfg) {
                Ok(p) => TrainError::Diverged {
                    epoch,
                    loss,
                    last_finite: Box::new(p),
                },
                Err(e) => e.into(),
            }
        };
        let out = match problem.run(model_cfg, cfg, &params, epoch) {
            Ok(out) if out.loss.is_finite() => out,
            Ok(out) => return Err(diverged(out.loss, &params)),
            Err(TrainError::Engine(e)) if is_non_finite(&e) => return Err(diverged(f64::NAN, &params)),
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: out.loss,
            val_metric: out.val,
            test_metric: out.test,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} val {:.4} test {:.4}",
            record.train_loss,
            record.val_metric,
            record.test_metric
        );
        if best.as_ref().is_none_or(|b| out.val > b.1) {
            best = Some((epoch, out.val, out.test, params.clone()));
        }
        records.push(record.clone());
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
        if epoch == cfg.max_epochs {
            break;
        }
        adam_step(&mut params.tensors_mut(), &out.grads, &mut state, cfg.lr, &decay)?;
        params.project();
        observe(&record, &params);
    }
    let (best_epoch, best_val, test_at_best, best_params) = best.expect("at least one epoch");
    log::info!(
        "best epoch {best_epoch}: val {} {best_val:.4}, test {test_at_best:.4}",
        cfg.task.metric_name()
    );
    Ok(FitResult {
        params: best_params,
        history: TrainHistory {
            records,
            best_epoch,
            best_val,
            test_at_best,
            stopped_early,
        },
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Metrics of fixed parameters on every split.
pub fn evaluate<T: Real>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    params: &ModelParams<T>,
    ds: &GraphDataset,
) -> Result<EvalReport, TrainError> {
    check_configs(model_cfg, cfg)?;
    let (train, val, test) = match cfg.task {
        Task::Classification => {
            let z = model::encode(model_cfg, params, &GraphInputs::new(ds))?;
            let head = params
                .head
                .as_ref()
                .ok_or_else(|| TrainError::Config("parameters have no classification head".into()))?;
            let preds = model::predict(&model::decode_class(head, &z)?);
            let acc = |mask: &[usize]| {
                if mask.is_empty() {
                    Ok(f64::NAN)
                } else {
                    accuracy(&preds, &ds.labels, mask)
                }
            };
            (acc(&ds.train)?, acc(&ds.val)?, acc(&ds.test)?)
        }
        Task::Link => {
            let split = LinkSplit::new(ds, cfg.link_split_seed())?;
            let z = model::encode(model_cfg, params, &inputs_with_edges(ds, &split.train))?;
            let train_neg = negative_sample(ds.n, split.train.len(), cfg.seed, &split.forbidden_for_training())?;
            (
                auc_of(&z, &split.train, &train_neg)?,
                auc_of(&z, &split.val, &split.val_neg)?,
                auc_of(&z, &split.test, &split.test_neg)?,
            )
        }
    };
    Ok(EvalReport {
        metric: cfg.task.metric_name().into(),
        train,
        val,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub layers: usize,
    pub best_epoch: usize,
    pub val: f64,
    pub test: f64,
}

/// One [`fit`] per layer count, all with the same seed.
pub fn layer_sweep<T: Real>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &GraphDataset,
    layer_counts: &[usize],
) -> Result<Vec<SweepRow>, TrainError> {
    if layer_counts.is_empty() {
        return Err(TrainError::Config("no layer counts given".into()));
    }
    layer_counts
        .iter()
        .map(|&layers| {
            let mc = ModelConfig {
                layers,
                ..model_cfg.clone()
            };
            let r = fit::<T>(&mc, cfg, ds)?;
            log::info!("layers {layers}: test {:.4}", r.history.test_at_best);
            Ok(SweepRow {
                layers,
                best_epoch: r.history.best_epoch,
                val: r.history.best_val,
                test: r.history.test_at_best,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    /// `max |g - fd| / max(|g|inf, |fd|inf)` over the tensor.
    pub rel_error: f64,
}

/// Sets every bias to a draw from `U(0.1, 0.6)`. Freshly initialized
/// networks have zero biases, which puts piecewise activations such as ReHU
/// exactly on their kinks where finite differences are meaningless.
pub fn jitter_biases<T: Real, R: rand::Rng>(params: &mut ModelParams<T>, rng: &mut R) {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = T::lit(rng.gen_range(0.1..0.6));
            }
        }
    }
    params.project();
}

/// Backpropagated gradients of the classification loss against central
/// differences, one entry per parameter tensor.
pub fn gradient_check<T: Real>(
    model_cfg: &ModelConfig,
    params: &ModelParams<T>,
    ds: &GraphDataset,
    fd_step: f64,
) -> Result<Vec<TensorCheck>, TrainError> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(TrainError::Config(format!("step must be positive, got {fd_step}")));
    }
    let all: Vec<usize> = (0..ds.n).collect();
    let mask = if ds.train.is_empty() { &all } else { &ds.train };
    let (leaves, program, loss) = class_program(model_cfg, params, &GraphInputs::new(ds), &ds.labels, mask)?;
    let base = bindings_for(&leaves, params);
    let analytic = program.run(&base)?.split_off(2);
    let value = Program::new(&[loss]);
    let h = T::lit(fd_step);
    let mut out = Vec::new();
    for ((leaf, (name, tensor)), g) in leaves.iter().zip(params.named_tensors()).zip(&analytic) {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..tensor.len() {
            let probe = |delta: T| -> Result<f64, TrainError> {
                let mut shifted = tensor.clone();
                shifted.data_mut()[i] = shifted.data()[i] + delta;
                let mut b = base.clone();
                b.bind(leaf, shifted);
                Ok(value.run(&b)?[0].item().as_f64())
            };
            let fd = (probe(h)? - probe(-h)?) / (2.0 * fd_step);
            let a = g.data()[i].as_f64();
            worst = worst.max((a - fd).abs());
            scale = scale.max(a.abs()).max(fd.abs());
        }
        out.push(TensorCheck {
            name,
            rel_error: if scale == 0.0 { 0.0 } else { worst / scale },
        });
    }
    Ok(out)
}
