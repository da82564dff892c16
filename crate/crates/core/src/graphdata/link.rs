use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{edge_key, DataError, GraphDataset};

/// Uniformly drawn distinct node pairs `(u, v)`, `u < v`, none of them in
/// `forbidden` (whose pairs must already be ordered).
pub fn negative_sample(
    n: usize,
    count: usize,
    seed: u64,
    forbidden: &HashSet<(usize, usize)>,
) -> Result<Vec<(usize, usize)>, DataError> {
    let total = n * n.saturating_sub(1) / 2;
    let blocked = forbidden.iter().filter(|&&(u, v)| u < v && v < n).count();
    let available = total - blocked;
    if count > available {
        return Err(DataError::TooDense {
            requested: count,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if 2 * count >= available || total <= 4096 {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|p| !forbidden.contains(p))
            .collect();
        all.shuffle(&mut rng);
        all.truncate(count);
        return Ok(all);
    }
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let key = edge_key(u, v);
        if !forbidden.contains(&key) && chosen.insert(key) {
            out.push(key);
        }
    }
    Ok(out)
}

/// Held-out edges with matching numbers of verified non-edges.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSplit {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl LinkSplit {
    pub const VAL_FRACTION: f64 = 0.05;
    pub const TEST_FRACTION: f64 = 0.10;

    /// 85/5/10 edge split; negatives avoid every edge of the graph.
    pub fn new(ds: &GraphDataset, seed: u64) -> Result<Self, DataError> {
        let mut edges = ds.edges.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        edges.shuffle(&mut rng);
        let m = edges.len();
        let n_val = (m as f64 * Self::VAL_FRACTION).round() as usize;
        let n_test = (m as f64 * Self::TEST_FRACTION).round() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= m {
            return Err(DataError::Invalid(format!("{m} edges are too few for a link split")));
        }
        let test = edges.split_off(m - n_test);
        let val = edges.split_off(m - n_test - n_val);
        let negatives = negative_sample(ds.n, n_val + n_test, rng.gen(), &ds.edge_set())?;
        let (val_neg, test_neg) = negatives.split_at(n_val);
        Ok(Self {
            train: edges,
            val,
            test,
            val_neg: val_neg.to_vec(),
            test_neg: test_neg.to_vec(),
        })
    }

    /// Pairs that training negatives must avoid: all edges and the held-out
    /// negatives.
    pub fn forbidden_for_training(&self) -> HashSet<(usize, usize)> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .chain(&self.val_neg)
            .chain(&self.test_neg)
            .copied()
            .collect()
    }
}
