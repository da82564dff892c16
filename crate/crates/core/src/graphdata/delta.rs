use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{DataError, GraphDataset};

/// Largest graph accepted by exact enumeration.
pub const EXACT_LIMIT: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaMode {
    Exact,
    /// `m` quadruples drawn uniformly without replacement; all of them when
    /// `m` is at least the number of quadruples.
    Sampled {
        m: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaReport {
    pub max_delta: f64,
    /// `counts[i]` quadruples had `delta = i / 2`.
    pub counts: Vec<u64>,
    pub quadruples: u64,
}

impl DeltaReport {
    /// `(delta, count)` pairs with non-zero counts.
    pub fn histogram(&self) -> Vec<(f64, u64)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as f64 / 2.0, c))
            .collect()
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| i as f64 / 2.0 * c as f64)
            .sum();
        total / self.quadruples.max(1) as f64
    }
}

struct Component {
    size: usize,
    /// Row-major `size x size` hop distances.
    dist: Vec<u32>,
}

impl Component {
    fn d(&self, a: usize, b: usize) -> u64 {
        u64::from(self.dist[a * self.size + b])
    }

    /// Twice the four-point delta of a quadruple of local indices.
    fn twice_delta(&self, w: usize, x: usize, y: usize, z: usize) -> usize {
        let mut s = [
            self.d(w, x) + self.d(y, z),
            self.d(w, y) + self.d(x, z),
            self.d(w, z) + self.d(x, y),
        ];
        s.sort_unstable();
        (s[2] - s[1]) as usize
    }
}

fn distances(adj: &[Vec<usize>], members: &[usize], local: &[usize]) -> Vec<u32> {
    let size = members.len();
    let rows: Vec<Vec<u32>> = members
        .par_iter()
        .map(|&src| {
            let mut row = vec![u32::MAX; size];
            row[local[src]] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let du = row[local[u]];
                for &v in &adj[u] {
                    if row[local[v]] == u32::MAX {
                        row[local[v]] = du + 1;
                        queue.push_back(v);
                    }
                }
            }
            row
        })
        .collect();
    rows.concat()
}

fn binom4(n: usize) -> u128 {
    if n < 4 {
        return 0;
    }
    let n = n as u128;
    n * (n - 1) * (n - 2) * (n - 3) / 24
}

fn binom(n: u128, k: u32) -> u128 {
    if n < u128::from(k) {
        return 0;
    }
    (0..u128::from(k)).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Combination of rank `r` in colex order: `c0 < c1 < c2 < c3` with
/// `r = C(c3, 4) + C(c2, 3) + C(c1, 2) + C(c0, 1)`.
fn unrank4(mut r: u128, size: usize) -> [usize; 4] {
    let mut out = [0usize; 4];
    let mut hi = size;
    for k in (1..=4u32).rev() {
        // largest c < hi with C(c, k) <= r
        let (mut lo, mut top) = (k as usize - 1, hi - 1);
        while lo < top {
            let mid = (lo + top).div_ceil(2);
            if binom(mid as u128, k) <= r {
                lo = mid;
            } else {
                top = mid - 1;
            }
        }
        out[k as usize - 1] = lo;
        r -= binom(lo as u128, k);
        hi = lo;
    }
    out
}

/// Gromov four-point δ over quadruples drawn inside connected components.
pub fn delta_hyperbolicity(g: &GraphDataset, mode: DeltaMode) -> Result<DeltaReport, DataError> {
    if g.n < 4 {
        return Err(DataError::Hyperbolicity(format!(
            "hyperbolicity needs at least 4 nodes, graph has {}",
            g.n
        )));
    }
    match mode {
        DeltaMode::Exact if g.n > EXACT_LIMIT => {
            return Err(DataError::Hyperbolicity(format!(
                "exact mode is limited to {EXACT_LIMIT} nodes, graph has {}; use sampled mode",
                g.n
            )));
        }
        DeltaMode::Sampled { m: 0, .. } => {
            return Err(DataError::Hyperbolicity("sample count must be positive".into()));
        }
        _ => {}
    }
    let adj = g.adjacency();
    let mut local = vec![0usize; g.n];
    let comps: Vec<Component> = g
        .components()
        .into_iter()
        .filter(|c| c.len() >= 4)
        .map(|members| {
            for (i, &v) in members.iter().enumerate() {
                local[v] = i;
            }
            Component {
                size: members.len(),
                dist: distances(&adj, &members, &local),
            }
        })
        .collect();
    let total: u128 = comps.iter().map(|c| binom4(c.size)).sum();
    if total == 0 {
        return Err(DataError::Hyperbolicity("no connected component has 4 nodes".into()));
    }
    let mut counts = Vec::new();
    let mut record = |t: usize| {
        if counts.len() <= t {
            counts.resize(t + 1, 0u64);
        }
        counts[t] += 1;
    };
    let draw_all = match mode {
        DeltaMode::Exact => true,
        DeltaMode::Sampled { m, .. } => m as u128 >= total,
    };
    if draw_all {
        for c in &comps {
            for w in 0..c.size {
                for x in w + 1..c.size {
                    for y in x + 1..c.size {
                        for z in y + 1..c.size {
                            record(c.twice_delta(w, x, y, z));
                        }
                    }
                }
            }
        }
    } else {
        let DeltaMode::Sampled { m, seed } = mode else {
            unreachable!()
        };
        let total =
            usize::try_from(total).map_err(|_| DataError::Hyperbolicity("too many quadruples to index".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ranks = rand::seq::index::sample(&mut rng, total, m).into_vec();
        ranks.sort_unstable();
        let mut start = 0u128;
        let mut ci = 0;
        for r in ranks {
            let r = r as u128;
            while r >= start + binom4(comps[ci].size) {
                start += binom4(comps[ci].size);
                ci += 1;
            }
            let c = &comps[ci];
            let [w, x, y, z] = unrank4(r - start, c.size);
            record(c.twice_delta(w, x, y, z));
        }
    }
    let quadruples = counts.iter().sum();
    let max_delta = counts.iter().rposition(|&c| c > 0).unwrap_or(0) as f64 / 2.0;
    Ok(DeltaReport {
        max_delta,
        counts,
        quadruples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;

    fn graph(n: usize, edges: Vec<(usize, usize)>) -> GraphDataset {
        GraphDataset::new("g", edges, Tensor::zeros(&[n, 1]), vec![0; n], vec![], vec![], vec![]).unwrap()
    }

    #[test]
    fn unrank_enumerates_colex() {
        let mut seen = Vec::new();
        for r in 0..binom4(7) {
            let c = unrank4(r, 7);
            assert!(c[0] < c[1] && c[1] < c[2] && c[2] < c[3] && c[3] < 7);
            seen.push(c);
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len() as u128, binom4(7));
    }

    #[test]
    fn cycle_of_four() {
        let r = delta_hyperbolicity(&graph(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]), DeltaMode::Exact).unwrap();
        assert_eq!(r.max_delta, 1.0);
        assert_eq!(r.quadruples, 1);
    }

    #[test]
    fn trees_are_zero_hyperbolic() {
        let star = graph(6, (1..6).map(|i| (0, i)).collect());
        let path = graph(7, (0..6).map(|i| (i, i + 1)).collect());
        let binary = graph(31, (1..31).map(|i| ((i - 1) / 2, i)).collect());
        for g in [star, path, binary] {
            assert_eq!(delta_hyperbolicity(&g, DeltaMode::Exact).unwrap().max_delta, 0.0);
        }
    }

    #[test]
    fn argument_errors() {
        assert!(delta_hyperbolicity(&graph(3, vec![(0, 1)]), DeltaMode::Exact).is_err());
        let g = graph(4, vec![(0, 1), (1, 2), (2, 3)]);
        assert!(delta_hyperbolicity(&g, DeltaMode::Sampled { m: 0, seed: 1 }).is_err());
        let big = graph(61, (0..60).map(|i| (i, i + 1)).collect());
        assert!(delta_hyperbolicity(&big, DeltaMode::Exact).is_err());
        assert!(delta_hyperbolicity(&big, DeltaMode::Sampled { m: 100, seed: 1 }).is_ok());
    }

    #[test]
    fn sampling_is_seeded() {
        let g = graph(30, (0..30).map(|i| (i, (i + 1) % 30)).collect());
        let a = delta_hyperbolicity(&g, DeltaMode::Sampled { m: 500, seed: 4 }).unwrap();
        let b = delta_hyperbolicity(&g, DeltaMode::Sampled { m: 500, seed: 4 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.quadruples, 500);
    }
}
