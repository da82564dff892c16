use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{EpochRecord, EvalReport, FitResult, TrainConfig, TrainError, TrainHistory};
use crate::graphdata::GraphDataset;
use crate::model::ModelConfig;

fn io(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> TrainError {
    TrainError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// `epoch,train_loss,val_metric,test_metric`, one row per epoch.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in &history.records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    if history.records.is_empty() {
        w.write_record(["epoch", "train_loss", "val_metric", "test_metric"])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<EpochRecord>, _>>()
        .map_err(|e| csv_err(path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunMetrics {
    pub task: String,
    pub metric: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub val_metric: f64,
    pub test_metric: f64,
    pub train_loss_at_best: f64,
    pub final_eval: Option<EvalReport>,
    pub parameters: usize,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub dataset: DatasetSummary,
    pub config: RunConfig,
}

impl RunMetrics {
    pub fn new<T: crate::engine::Real>(
        model: &ModelConfig,
        train: &TrainConfig,
        ds: &GraphDataset,
        fit: &FitResult<T>,
        final_eval: Option<EvalReport>,
    ) -> Self {
        let h = &fit.history;
        let at_best = h.records.iter().find(|r| r.epoch == h.best_epoch);
        Self {
            task: format!("{:?}", train.task).to_lowercase(),
            metric: train.task.metric_name().into(),
            best_epoch: h.best_epoch,
            epochs_run: h.records.len(),
            stopped_early: h.stopped_early,
            val_metric: h.best_val,
            test_metric: h.test_at_best,
            train_loss_at_best: at_best.map_or(f64::NAN, |r| r.train_loss),
            final_eval,
            parameters: fit.params.num_parameters(),
            seed: train.seed,
            wall_time_seconds: fit.wall_time,
            dataset: DatasetSummary {
                name: ds.name.clone(),
                nodes: ds.n,
                edges: ds.edges.len(),
                features: ds.num_features(),
                classes: ds.num_classes,
            },
            config: RunConfig {
                model: model.clone(),
                train: train.clone(),
            },
        }
    }
}

pub fn write_metrics_json<M: Serialize>(path: &Path, metrics: &M) -> Result<(), TrainError> {
    let body = serde_json::to_string_pretty(metrics).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    fs::write(path, body + "\n").map_err(io(path))
}
