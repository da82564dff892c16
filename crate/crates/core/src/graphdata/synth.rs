use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_masks, DataError, GraphDataset, Split};
use crate::engine::Tensor;

/// Amplitude of the uniform noise added to one-hot features.
const NOISE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SynthKind {
    /// Complete tree; labels are depth parity.
    Tree { depth: usize, branching: usize },
    /// Stochastic block model; labels are block ids.
    Sbm { sizes: Vec<usize>, p_in: f64, p_out: f64 },
    /// `w x h` lattice; labels are checkerboard parity.
    Grid { w: usize, h: usize },
}

impl SynthKind {
    fn name(&self) -> String {
        match self {
            SynthKind::Tree { depth, branching } => format!("tree-{depth}-{branching}"),
            SynthKind::Sbm { sizes, .. } => {
                let s: Vec<String> = sizes.iter().map(ToString::to_string).collect();
                format!("sbm-{}", s.join("-"))
            }
            SynthKind::Grid { w, h } => format!("grid-{w}x{h}"),
        }
    }
}

pub fn synth_dataset(kind: &SynthKind, seed: u64) -> Result<GraphDataset, DataError> {
    let degenerate = |msg: &str| Err(DataError::Invalid(format!("degenerate synthetic graph: {msg}")));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels, edges): (Vec<usize>, Vec<(usize, usize)>) = match kind {
        SynthKind::Tree { depth, branching } => {
            if *depth == 0 || *branching == 0 {
                return degenerate("tree needs depth and branching of at least 1");
            }
            let mut depth_of = vec![0usize];
            let mut edges = Vec::new();
            let mut level_start = 0;
            for level in 1..=*depth {
                let level_end = depth_of.len();
                for parent in level_start..level_end {
                    for _ in 0..*branching {
                        edges.push((parent, depth_of.len()));
                        depth_of.push(level);
                    }
                }
                level_start = level_end;
            }
            (depth_of.iter().map(|d| d % 2).collect(), edges)
        }
        SynthKind::Sbm { sizes, p_in, p_out } => {
            if sizes.is_empty() || sizes.contains(&0) {
                return degenerate("every block needs at least one node");
            }
            if !(0.0..=1.0).contains(p_in) || !(0.0..=1.0).contains(p_out) {
                return degenerate("edge probabilities must lie in [0, 1]");
            }
            let labels: Vec<usize> = sizes
                .iter()
                .enumerate()
                .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
                .collect();
            let mut edges = Vec::new();
            for u in 0..labels.len() {
                for v in u + 1..labels.len() {
                    let p = if labels[u] == labels[v] { *p_in } else { *p_out };
                    if rng.gen_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            (labels, edges)
        }
        SynthKind::Grid { w, h } => {
            if *w == 0 || *h == 0 {
                return degenerate("grid sides must be positive");
            }
            let id = |x: usize, y: usize| y * w + x;
            let mut edges = Vec::new();
            for y in 0..*h {
                for x in 0..*w {
                    if x + 1 < *w {
                        edges.push((id(x, y), id(x + 1, y)));
                    }
                    if y + 1 < *h {
                        edges.push((id(x, y), id(x, y + 1)));
                    }
                }
            }
            let labels = (0..w * h).map(|i| (i % w + i / w) % 2).collect();
            (labels, edges)
        }
    };
    let n = labels.len();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut data = vec![0.0; n * classes];
    for (i, &l) in labels.iter().enumerate() {
        for (j, v) in data[i * classes..(i + 1) * classes].iter_mut().enumerate() {
            *v = f64::from(u8::from(j == l)) + rng.gen_range(-NOISE..NOISE);
        }
    }
    let features = Tensor::new(&[n, classes], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    let (train, val, test) = random_masks(n, Split::default(), seed.wrapping_add(1));
    GraphDataset::new(kind.name(), edges, features, labels, train, val, test)
}
