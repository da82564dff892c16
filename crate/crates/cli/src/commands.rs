use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use hamgnn::graphdata::{
    delta_hyperbolicity, load_dataset, mix_datasets, save_dataset, synth_dataset, DeltaMode, GraphDataset, LinkSplit,
    Split, SynthKind,
};
use hamgnn::hamiltonian::VariantKind;
use hamgnn::model::{encode, load_checkpoint, save_checkpoint, GraphInputs, ModelParams};
use hamgnn::train::{
    evaluate, fit, inputs_with_edges, layer_sweep, write_history_csv, write_metrics_json, EvalReport, RunMetrics, Task,
    TrainError,
};
use serde_json::{json, Value};

use crate::checks;
use crate::config::{DatasetSource, RunConfig};
use crate::error::{config_error, Failure, Phase, EXIT_RUNTIME};

pub const CONFIG_ECHO: &str = "config.json";
pub const METRICS: &str = "metrics.json";
pub const HISTORY: &str = "history.csv";
pub const SWEEP: &str = "sweep.csv";
pub const EMBEDDINGS: &str = "embeddings.csv";

fn write_json(path: &Path, v: &impl serde::Serialize) -> anyhow::Result<()> {
    let body = serde_json::to_string_pretty(v)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare(cfg: &RunConfig) -> Result<GraphDataset, Failure> {
    let ds = cfg.dataset.load().setup()?;
    fs::create_dir_all(&cfg.output)
        .with_context(|| format!("creating {}", cfg.output.display()))
        .setup()?;
    write_json(&cfg.output.join(CONFIG_ECHO), cfg).runtime()?;
    Ok(ds)
}

/// Adds `val_<metric>` and `test_<metric>` and replaces the config echo
/// with the full run config.
fn metrics_document(m: &RunMetrics, cfg: &RunConfig) -> anyhow::Result<Value> {
    let mut v = serde_json::to_value(m)?;
    let obj = v.as_object_mut().context("metrics serialize to an object")?;
    obj.insert(format!("val_{}", m.metric), json!(m.val_metric));
    obj.insert(format!("test_{}", m.metric), json!(m.test_metric));
    obj.insert("config".into(), serde_json::to_value(cfg)?);
    Ok(v)
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let ds = prepare(cfg)?;
    log::info!(
        "{}: {} nodes, {} edges, {} features, {} classes",
        ds.name,
        ds.n,
        ds.edges.len(),
        ds.num_features(),
        ds.num_classes
    );
    let fit = match fit::<f64>(&cfg.model, &cfg.train, &ds) {
        Ok(f) => f,
        Err(e @ TrainError::Diverged { .. }) => return Err(Failure::runtime(e)),
        Err(e @ (TrainError::Config(_) | TrainError::Model(hamgnn::model::ModelError::Config(_)))) => {
            return Err(Failure::config(e))
        }
        Err(e) => return Err(Failure::runtime(e)),
    };
    let out = &cfg.output;
    write_history_csv(&out.join(HISTORY), &fit.history).runtime()?;
    save_checkpoint(out, &cfg.model, &fit.params, serde_json::to_value(cfg).runtime()?).runtime()?;
    let final_eval = evaluate(&cfg.model, &cfg.train, &fit.params, &ds).runtime()?;
    let metrics = RunMetrics::new(&cfg.model, &cfg.train, &ds, &fit, Some(final_eval));
    write_metrics_json(&out.join(METRICS), &metrics_document(&metrics, cfg).runtime()?).runtime()?;
    println!(
        "best epoch {}: val {} {:.4}, test {:.4}",
        metrics.best_epoch, metrics.metric, metrics.val_metric, metrics.test_metric
    );
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: Option<PathBuf>,
    pub task: Option<Task>,
    pub out: PathBuf,
    pub embeddings: bool,
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint::<f64>(&args.checkpoint).setup()?;
    let mut run: RunConfig = serde_json::from_value(ckpt.manifest.run.clone())
        .context("checkpoint does not carry a run config")
        .setup()?;
    if let Some(path) = &args.dataset {
        let normalize = match &run.dataset {
            DatasetSource::Dir { normalize, .. } => *normalize,
            DatasetSource::Synth { .. } => true,
        };
        run.dataset = DatasetSource::Dir {
            path: path.clone(),
            normalize,
        };
    }
    if let Some(task) = args.task {
        run.train.task = task;
    }
    let model_cfg = ckpt.manifest.model.clone();
    if model_cfg.decoder != run.train.task.decoder() {
        return Err(config_error(format!(
            "checkpoint was trained with the {:?} decoder, which cannot serve task {:?}",
            model_cfg.decoder, run.train.task
        )));
    }
    let ds = run.dataset.load().setup()?;
    if ds.num_features() != ckpt.manifest.num_features {
        return Err(config_error(format!(
            "checkpoint expects {} features, dataset {} has {}",
            ckpt.manifest.num_features,
            ds.name,
            ds.num_features()
        )));
    }
    if let Some(c) = ckpt.manifest.num_classes {
        if run.train.task == Task::Classification && ds.num_classes > c {
            return Err(config_error(format!(
                "checkpoint has {c} classes, dataset {} has {}",
                ds.name, ds.num_classes
            )));
        }
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .setup()?;
    let report = evaluate(&model_cfg, &run.train, &ckpt.params, &ds).runtime()?;
    if args.embeddings {
        let z = embeddings(&run, &ckpt.params, &ds).runtime()?;
        write_embeddings(&args.out.join(EMBEDDINGS), &z).runtime()?;
    }
    let doc = eval_document(&report, &run, &args.checkpoint, &ds);
    write_json(&args.out.join(METRICS), &doc).runtime()?;
    println!(
        "{}: train {:.4} val {:.4} test {:.4}",
        report.metric, report.train, report.val, report.test
    );
    Ok(())
}

fn eval_document(report: &EvalReport, run: &RunConfig, checkpoint: &Path, ds: &GraphDataset) -> Value {
    let mut doc = json!({
        "task": run.train.task,
        "metric": report.metric,
        "final_eval": report,
        "checkpoint": checkpoint,
        "dataset": {"name": ds.name, "nodes": ds.n, "edges": ds.edges.len()},
        "seed": run.train.seed,
        "config": run,
    });
    for (split, v) in [("train", report.train), ("val", report.val), ("test", report.test)] {
        doc[format!("{split}_{}", report.metric)] = json!(v);
    }
    doc
}

/// Node embeddings as seen by the decoder.
fn embeddings(run: &RunConfig, params: &ModelParams<f64>, ds: &GraphDataset) -> anyhow::Result<hamgnn::Tensor> {
    let inputs = match run.train.task {
        Task::Classification => GraphInputs::new(ds),
        Task::Link => {
            let split = LinkSplit::new(ds, run.train.link_split_seed())?;
            inputs_with_edges(ds, &split.train)
        }
    };
    Ok(encode(&run.model, params, &inputs)?)
}

fn write_embeddings(path: &Path, z: &hamgnn::Tensor) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in 0..z.shape()[0] {
        let row: Vec<String> = z.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_layers(cfg: &RunConfig, layers: &[usize]) -> Result<(), Failure> {
    if layers.is_empty() || layers.contains(&0) {
        return Err(config_error(
            "layer counts must be a non-empty list of positive integers",
        ));
    }
    for &l in layers {
        let mut c = cfg.model.clone();
        c.layers = l;
        c.validate().setup()?;
    }
    let ds = prepare(cfg)?;
    let rows = layer_sweep::<f64>(&cfg.model, &cfg.train, &ds, layers).runtime()?;
    let path = cfg.output.join(SWEEP);
    let mut w = BufWriter::new(
        File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .runtime()?,
    );
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "layers,best_epoch,val_metric,test_metric")?;
        for r in &rows {
            writeln!(w, "{},{},{:?},{:?}", r.layers, r.best_epoch, r.val, r.test)?;
            println!("layers {:>3}: val {:.4} test {:.4}", r.layers, r.val, r.test);
        }
        w.flush()
    };
    body().runtime()
}

pub struct HyperbolicityArgs {
    pub dataset: PathBuf,
    pub sampled: Option<(usize, u64)>,
    pub out: Option<PathBuf>,
}

pub fn hyperbolicity(args: &HyperbolicityArgs) -> Result<(), Failure> {
    let ds = load_dataset(&args.dataset).setup()?;
    let mode = match args.sampled {
        None => DeltaMode::Exact,
        Some((m, seed)) => DeltaMode::Sampled { m, seed },
    };
    let report = delta_hyperbolicity(&ds, mode).setup()?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)
            .with_context(|| format!("creating {}", out.display()))
            .setup()?;
        let doc = json!({
            "dataset": ds.name,
            "mode": match mode { DeltaMode::Exact => "exact", DeltaMode::Sampled { .. } => "sampled" },
            "max_delta": report.max_delta,
            "mean_delta": report.mean(),
            "quadruples": report.quadruples,
            "histogram": report.histogram().iter().map(|(d, c)| json!({"delta": d, "count": c})).collect::<Vec<_>>(),
        });
        write_json(&out.join("delta.json"), &doc).runtime()?;
        let mut csv = String::from("delta,count\n");
        for (d, c) in report.histogram() {
            csv.push_str(&format!("{d:?},{c}\n"));
        }
        fs::write(out.join("delta_histogram.csv"), csv).runtime()?;
    }
    println!(
        "max_delta {} mean_delta {:.4} quadruples {}",
        report.max_delta,
        report.mean(),
        report.quadruples
    );
    Ok(())
}

pub fn mix(a: &Path, b: &Path, out: &Path, seed: u64, split: Split) -> Result<(), Failure> {
    let da = load_dataset(a).setup()?;
    let db = load_dataset(b).setup()?;
    let mixed = mix_datasets(&da, &db, split, seed).runtime()?;
    let cross = mixed.edges.iter().filter(|&&(u, v)| (u < da.n) != (v < da.n)).count();
    save_dataset(&mixed, out).runtime()?;
    println!(
        "{} nodes, {} edges ({} cross), {} features, {} classes",
        mixed.n,
        mixed.edges.len(),
        cross,
        mixed.num_features(),
        mixed.num_classes
    );
    Ok(())
}

pub fn synth(spec: &str, seed: u64, out: &Path) -> Result<(), Failure> {
    let kind: SynthKind = serde_json::from_str(spec)
        .context("parsing synthetic graph spec")
        .setup()?;
    let ds = synth_dataset(&kind, seed).setup()?;
    save_dataset(&ds, out).runtime()?;
    println!("{}: {} nodes, {} edges", ds.name, ds.n, ds.edges.len());
    Ok(())
}

pub fn gradcheck(variant: &str, dim: usize, seed: u64) -> Result<(), Failure> {
    let kind = VariantKind::parse(variant).ok_or_else(|| {
        let names: Vec<&str> = VariantKind::ALL.iter().map(|k| k.name()).collect();
        config_error(format!(
            "unknown variant {variant:?}; expected one of {}",
            names.join(", ")
        ))
    })?;
    if dim == 0 {
        return Err(config_error("dimension must be positive"));
    }
    let results = checks::run_suite(kind, dim, seed).runtime()?;
    for c in &results {
        println!("{}", c.line());
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            error: anyhow::anyhow!("{failed} of {} checks failed for {kind} at d = {dim}", results.len()),
        });
    }
    println!("all {} checks passed for {kind} at d = {dim}", results.len());
    Ok(())
}
