use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{edge_key, DataError, GraphDataset};
use crate::engine::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// L1-normalize feature rows after reading.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn open(dir: &Path, name: &str) -> Result<File, DataError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(DataError::MissingFile(path));
    }
    File::open(&path).map_err(|source| DataError::Io { path, source })
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, csv::Position::line)
}

fn csv_error(file: &'static str, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, csv::Position::line);
    DataError::Parse {
        file,
        line,
        msg: e.to_string(),
    }
}

/// Loads a dataset directory with L1-normalized features.
pub fn load_dataset(dir: &Path) -> Result<GraphDataset, DataError> {
    load_dataset_with(dir, LoadOptions::default())
}

pub fn load_dataset_with(dir: &Path, opts: LoadOptions) -> Result<GraphDataset, DataError> {
    let (labels, features) = read_nodes(dir)?;
    let n = labels.len();
    let edges = read_edges(dir, n)?;
    let splits = read_splits(dir)?;
    let name = dir
        .file_name()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let mut ds = GraphDataset::new(name, edges, features, labels, splits.train, splits.val, splits.test).map_err(
        |e| match e {
            DataError::Invalid(msg) => DataError::Splits(msg),
            other => other,
        },
    )?;
    if opts.normalize {
        ds.normalize_features();
    }
    Ok(ds)
}

fn read_nodes(dir: &Path) -> Result<(Vec<usize>, Tensor<f64>), DataError> {
    const FILE: &str = "nodes.csv";
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(dir, FILE)?);
    let header = reader.headers().map_err(|e| csv_error(FILE, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(DataError::Parse {
            file: FILE,
            line: 1,
            msg: format!("header must start with id,label, got {}", cols.join(",")),
        });
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(DataError::Parse {
                file: FILE,
                line: 1,
                msg: format!("feature column {} must be named f{j}, got {c}", j + 2),
            });
        }
    }
    let f = cols.len() - 2;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(FILE, e))?;
        let line = line_of(&record);
        let bad = |msg: String| DataError::Parse { file: FILE, line, msg };
        if record.len() != f + 2 {
            return Err(bad(format!(
                "ragged row: {} fields, header has {}",
                record.len(),
                f + 2
            )));
        }
        let id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad node id {:?}", &record[0])))?;
        if id < labels.len() {
            return Err(bad(format!("duplicate node id {id}")));
        }
        if id != labels.len() {
            return Err(bad(format!(
                "node ids must be 0..n in order, expected {} got {id}",
                labels.len()
            )));
        }
        let label: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad label {:?}", &record[1])))?;
        labels.push(label);
        for field in record.iter().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad feature value {field:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite feature value {field:?}")));
            }
            data.push(v);
        }
    }
    let features = Tensor::new(&[labels.len(), f], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok((labels, features))
}

fn read_edges(dir: &Path, n: usize) -> Result<Vec<(usize, usize)>, DataError> {
    const FILE: &str = "edges.tsv";
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(b'\t')
        .flexible(true)
        .from_reader(open(dir, FILE)?);
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(FILE, e))?;
        let line = line_of(&record);
        let bad = |msg: String| DataError::Parse { file: FILE, line, msg };
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(bad(format!(
                "expected two tab-separated ids, got {} fields",
                record.len()
            )));
        }
        let mut ids = [0usize; 2];
        for (slot, field) in ids.iter_mut().zip(record.iter()) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad node id {field:?}")))?;
        }
        let [u, v] = ids;
        if u == v {
            return Err(DataError::SelfLoop { line });
        }
        if u >= n || v >= n {
            return Err(bad(format!("unknown node id {} (n = {n})", u.max(v))));
        }
        if !seen.insert(edge_key(u, v)) {
            return Err(bad(format!("duplicate edge {u}\t{v}")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_splits(dir: &Path) -> Result<SplitsFile, DataError> {
    let path = dir.join("splits.json");
    let file = open(dir, "splits.json")?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| DataError::Splits(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the dataset in the directory format. Feature values use the
/// shortest representation that parses back to the same `f64`.
pub fn save_dataset(ds: &GraphDataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let nodes = dir.join("nodes.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&nodes).map_err(io_err(&nodes))?));
    let to_data = |e: csv::Error| DataError::Invalid(format!("writing nodes.csv: {e}"));
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..ds.num_features()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(to_data)?;
    for i in 0..ds.n {
        let mut row = vec![i.to_string(), ds.labels[i].to_string()];
        row.extend(ds.features.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(to_data)?;
    }
    w.flush().map_err(io_err(&nodes))?;

    let edges = dir.join("edges.tsv");
    let mut w = BufWriter::new(File::create(&edges).map_err(io_err(&edges))?);
    for &(u, v) in &ds.edges {
        writeln!(w, "{u}\t{v}").map_err(io_err(&edges))?;
    }
    w.flush().map_err(io_err(&edges))?;

    let splits = dir.join("splits.json");
    let body = serde_json::to_string(&SplitsFile {
        train: ds.train.clone(),
        val: ds.val.clone(),
        test: ds.test.clone(),
    })
    .map_err(|e| DataError::Splits(e.to_string()))?;
    fs::write(&splits, body + "\n").map_err(io_err(&splits))?;
    Ok(())
}
