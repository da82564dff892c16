use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, GraphDataset};
use crate::engine::Tensor;

/// Train/val/test proportions; the test share is whatever remains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Shuffles `0..n` and cuts it into masks of the given proportions.
pub fn random_masks(n: usize, split: Split, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = split.train + split.val + split.test;
    let n_train = ((split.train / total) * n as f64).round() as usize;
    let n_val = (((split.val / total) * n as f64).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    (ids, val, test)
}

/// Disjoint union of two graphs. Node ids of `b` are shifted by `a.n`,
/// features are zero-padded to the wider input, labels of `b` are shifted
/// by `a`'s class count, and masks are drawn afresh.
pub fn mix_datasets(a: &GraphDataset, b: &GraphDataset, split: Split, seed: u64) -> Result<GraphDataset, DataError> {
    let f = a.num_features().max(b.num_features());
    let n = a.n + b.n;
    let mut data = vec![0.0; n * f];
    for (offset, ds) in [(0, a), (a.n, b)] {
        let fd = ds.num_features();
        for i in 0..ds.n {
            let row = (offset + i) * f;
            data[row..row + fd].copy_from_slice(ds.features.row(i));
        }
    }
    let features = Tensor::new(&[n, f], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    let labels = a
        .labels
        .iter()
        .copied()
        .chain(b.labels.iter().map(|&l| l + a.num_classes))
        .collect();
    let edges = a
        .edges
        .iter()
        .copied()
        .chain(b.edges.iter().map(|&(u, v)| (u + a.n, v + a.n)))
        .collect();
    let (train, val, test) = random_masks(n, split, seed);
    let mut mixed = GraphDataset::new(
        format!("{}+{}", a.name, b.name),
        edges,
        features,
        labels,
        train,
        val,
        test,
    )?;
    mixed.num_classes = a.num_classes + b.num_classes;
    Ok(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, f: usize, edges: Vec<(usize, usize)>) -> GraphDataset {
        let data = (0..n * f).map(|i| i as f64 + 1.0).collect();
        GraphDataset::new(
            "s",
            edges,
            Tensor::new(&[n, f], data).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            vec![],
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn union_of_two_small_graphs() {
        let a = small(2, 3, vec![(0, 1)]);
        let b = small(3, 5, vec![(0, 1), (1, 2)]);
        let m = mix_datasets(&a, &b, Split::default(), 1).unwrap();
        assert_eq!((m.n, m.num_features(), m.num_classes, m.edges.len()), (5, 5, 4, 3));
        assert_eq!(m.features.row(0), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(m.features.row(2), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m.labels, vec![0, 1, 2, 3, 2]);
        assert!(m.edges.iter().all(|&(u, v)| (u < 2) == (v < 2)));
        assert_eq!(m.train.len() + m.val.len() + m.test.len(), 5);
    }

    #[test]
    fn self_mix_doubles_and_disconnects() {
        let a = small(4, 2, vec![(0, 1), (1, 2), (2, 3)]);
        let m = mix_datasets(&a, &a, Split::default(), 9).unwrap();
        assert_eq!(m.n, 8);
        assert!(m.components().len() >= 2);
    }

    #[test]
    fn masks_follow_proportions_and_seed() {
        let (tr, va, te) = random_masks(100, Split::default(), 3);
        assert_eq!((tr.len(), va.len(), te.len()), (60, 20, 20));
        assert_eq!(random_masks(100, Split::default(), 3).0, tr);
        assert_ne!(random_masks(100, Split::default(), 4).0, tr);
    }
}
