//! Graph datasets: the in-memory model, the portable directory format,
//! mixing, synthetic generators, link splits and δ-hyperbolicity.

mod delta;
mod io;
mod link;
mod mix;
mod synth;

use std::collections::HashSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::engine::Tensor;

pub use delta::{delta_hyperbolicity, DeltaMode, DeltaReport, EXACT_LIMIT};
pub use io::{load_dataset, load_dataset_with, save_dataset, LoadOptions};
pub use link::{negative_sample, LinkSplit};
pub use mix::{mix_datasets, random_masks, Split};
pub use synth::{synth_dataset, SynthKind};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {msg} at line {line}")]
    Parse { file: &'static str, line: u64, msg: String },
    #[error("self-loop at line {line} of edges.tsv")]
    SelfLoop { line: u64 },
    #[error("splits.json: {0}")]
    Splits(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("too few non-edges: requested {requested}, only {available} exist")]
    TooDense { requested: usize, available: usize },
    #[error("{0}")]
    Hyperbolicity(String),
}

/// Undirected graph with node features, integer labels and node masks.
/// Edges are stored once each as `(u, v)` with `u < v`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    /// `[n, F]`
    pub features: Tensor<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(min, max)` of a pair.
pub fn edge_key(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl GraphDataset {
    /// Validates and assembles a dataset. The class count is one more than
    /// the largest label.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        edges: Vec<(usize, usize)>,
        features: Tensor<f64>,
        labels: Vec<usize>,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if features.rank() != 2 || features.shape()[0] != n {
            return Err(DataError::Invalid(format!(
                "features {:?} for {n} nodes",
                features.shape()
            )));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(DataError::Invalid(format!("edge ({u}, {v}) outside 0..{n}")));
            }
            if u == v {
                return Err(DataError::Invalid(format!("self-loop at node {u}")));
            }
            let key = edge_key(u, v);
            if !seen.insert(key) {
                return Err(DataError::Invalid(format!("duplicate edge ({u}, {v})")));
            }
            normalized.push(key);
        }
        let mut used = vec![false; n];
        for (split, ids) in [("train", &train), ("val", &val), ("test", &test)] {
            for &i in ids.iter() {
                if i >= n {
                    return Err(DataError::Invalid(format!(
                        "{split} mask holds node {i} outside 0..{n}"
                    )));
                }
                if used[i] {
                    return Err(DataError::Invalid(format!("node {i} appears in more than one mask")));
                }
                used[i] = true;
            }
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            name: name.into(),
            n,
            edges: normalized,
            features,
            labels,
            num_classes,
            train,
            val,
            test,
        })
    }

    pub fn num_features(&self) -> usize {
        self.features.shape()[1]
    }

    /// Neighbor lists, sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// Connected components as sorted node lists, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut comp = vec![usize::MAX; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp[start] = id;
            let mut head = 0;
            while head < members.len() {
                let u = members[head];
                head += 1;
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        members.push(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Divides every feature row by its L1 norm; all-zero rows stay zero.
    pub fn normalize_features(&mut self) {
        let f = self.num_features();
        let data = self.features.data_mut();
        for row in data.chunks_mut(f.max(1)) {
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm > 0.0 {
                for v in row {
                    *v /= norm;
                }
            }
        }
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, DataError> {
        if perm.len() != self.n {
            return Err(DataError::Invalid("permutation length differs from node count".into()));
        }
        let f = self.num_features();
        let mut features = vec![0.0; self.n * f];
        let mut labels = vec![0; self.n];
        for (i, &j) in perm.iter().enumerate() {
            features[j * f..(j + 1) * f].copy_from_slice(self.features.row(i));
            labels[j] = self.labels[i];
        }
        let map = |ids: &[usize]| ids.iter().map(|&i| perm[i]).collect::<Vec<_>>();
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let features = Tensor::new(&[self.n, f], features).map_err(|e| DataError::Invalid(e.to_string()))?;
        let mut out = Self::new(
            self.name.clone(),
            edges,
            features,
            labels,
            map(&self.train),
            map(&self.val),
            map(&self.test),
        )?;
        out.num_classes = self.num_classes;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path3() -> GraphDataset {
        GraphDataset::new(
            "path3",
            vec![(0, 1), (2, 1)],
            Tensor::new(&[3, 2], vec![1.0, 0.0, 0.5, 0.5, 0.0, 2.0]).unwrap(),
            vec![0, 1, 0],
            vec![0],
            vec![1],
            vec![2],
        )
        .unwrap()
    }

    #[test]
    fn edges_are_normalized() {
        assert_eq!(path3().edges, vec![(0, 1), (1, 2)]);
        assert_eq!(path3().adjacency(), vec![vec![1], vec![0, 2], vec![1]]);
    }

    #[test]
    fn rejects_bad_structure() {
        let f = Tensor::zeros(&[2, 1]);
        let mk = |edges, train: Vec<usize>, val: Vec<usize>| {
            GraphDataset::new("x", edges, f.clone(), vec![0, 1], train, val, vec![])
        };
        assert!(mk(vec![(0, 0)], vec![], vec![]).is_err());
        assert!(mk(vec![(0, 1), (1, 0)], vec![], vec![]).is_err());
        assert!(mk(vec![(0, 2)], vec![], vec![]).is_err());
        assert!(mk(vec![], vec![0], vec![0]).is_err());
        assert!(mk(vec![(0, 1)], vec![0], vec![1]).is_ok());
    }

    #[test]
    fn l1_normalization() {
        let mut d = GraphDataset::new(
            "x",
            vec![],
            Tensor::new(&[2, 3], vec![2.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![0, 0],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        d.normalize_features();
        assert_eq!(d.features.data(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn components_of_disjoint_pieces() {
        let d = GraphDataset::new(
            "x",
            vec![(0, 3), (1, 2)],
            Tensor::zeros(&[5, 1]),
            vec![0; 5],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(d.components(), vec![vec![0, 3], vec![1, 2], vec![4]]);
    }
}
