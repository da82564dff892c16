use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use hamgnn::graphdata::{load_dataset_with, synth_dataset, GraphDataset, LoadOptions, SynthKind};
use hamgnn::model::ModelConfig;
use hamgnn::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// A dataset directory (`nodes.csv`, `edges.tsv`, `splits.json`).
    Dir {
        path: PathBuf,
        #[serde(default = "default_true")]
        normalize: bool,
    },
    Synth {
        spec: SynthKind,
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self) -> anyhow::Result<GraphDataset> {
        match self {
            DatasetSource::Dir { path, normalize } => load_dataset_with(path, LoadOptions { normalize: *normalize })
                .with_context(|| format!("loading dataset {}", path.display())),
            DatasetSource::Synth { spec, seed } => Ok(synth_dataset(spec, *seed)?),
        }
    }

    fn resolve(&mut self, base: &Path) -> anyhow::Result<()> {
        if let DatasetSource::Dir { path, .. } = self {
            let joined = base.join(&*path);
            *path = joined
                .canonicalize()
                .with_context(|| format!("dataset directory {} does not exist", joined.display()))?;
        }
        Ok(())
    }
}

/// Everything a run needs. The seed lives in `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub output: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reads a config file and applies `key=value` overrides. A relative
    /// dataset path is taken from the file's directory, a relative output
    /// directory from the working directory.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut doc: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::from_value(doc, &base)
    }

    pub fn from_value(mut doc: Value, base: &Path) -> anyhow::Result<Self> {
        fill_decoder(&mut doc);
        let mut cfg: RunConfig = serde_json::from_value(doc).context("invalid config")?;
        cfg.dataset.resolve(base)?;
        if cfg.output.is_relative() {
            cfg.output = std::env::current_dir()?.join(&cfg.output);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.decoder != self.train.task.decoder() {
            bail!(
                "model.decoder {:?} does not fit train.task {:?}",
                self.model.decoder,
                self.train.task
            );
        }
        Ok(())
    }
}

/// A missing `model.decoder` follows `train.task`.
fn fill_decoder(doc: &mut Value) {
    let Some(task) = doc.pointer("/train/task").cloned() else {
        return;
    };
    if let Some(obj) = doc.as_object_mut() {
        let model = obj.entry("model").or_insert_with(|| Value::Object(Default::default()));
        if let Some(m) = model.as_object_mut() {
            m.entry("decoder").or_insert(task);
        }
    }
}

/// `a.b.c=value`; the value is read as JSON and falls back to a string.
pub fn apply_override(doc: &mut Value, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} has an empty segment");
    }
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| anyhow!("override {key:?}: {} is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}
