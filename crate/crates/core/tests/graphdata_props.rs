use hamgnn::engine::Tensor;
use hamgnn::graphdata::{
    delta_hyperbolicity, load_dataset_with, mix_datasets, save_dataset, DeltaMode, GraphDataset, LoadOptions, Split,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, connected: bool) -> GraphDataset {
    let mut edges = Vec::new();
    // a random spanning tree keeps the graph connected
    if connected {
        for i in 1..n {
            edges.push((rng.gen_range(0..i), i));
        }
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) && !edges.contains(&(u, v)) {
                edges.push((u, v));
            }
        }
    }
    let features = (0..n * 3).map(|_| rng.gen_range(-1e3..1e3)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let (train, val, test) = hamgnn::graphdata::random_masks(n, Split::default(), rng.gen());
    GraphDataset::new(
        "r",
        edges,
        Tensor::new(&[n, 3], features).unwrap(),
        labels,
        train,
        val,
        test,
    )
    .unwrap()
}

fn brute_force(g: &GraphDataset) -> Vec<u64> {
    // Floyd-Warshall distances, then every quadruple inside one component
    let n = g.n;
    let inf = u64::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(u, v) in &g.edges {
        d[u][v] = 1;
        d[v][u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let mut counts = vec![0u64; 2 * n + 1];
    for w in 0..n {
        for x in w + 1..n {
            for y in x + 1..n {
                for z in y + 1..n {
                    let q = [w, x, y, z];
                    if q.iter().any(|&a| d[w][a] >= inf) {
                        continue;
                    }
                    let mut s = [d[w][x] + d[y][z], d[w][y] + d[x][z], d[w][z] + d[x][y]];
                    s.sort_unstable();
                    counts[(s[2] - s[1]) as usize] += 1;
                }
            }
        }
    }
    while counts.last() == Some(&0) {
        counts.pop();
    }
    counts
}

#[test]
fn sampled_all_equals_exact_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for trial in 0..50 {
        let n = rng.gen_range(4..=20);
        let connected = trial % 3 != 0;
        let p = rng.gen_range(0.05..0.5);
        let g = random_graph(&mut rng, n, p, connected);
        let Ok(exact) = delta_hyperbolicity(&g, DeltaMode::Exact) else {
            // every component smaller than four nodes
            assert!(g.components().iter().all(|c| c.len() < 4));
            continue;
        };
        let sampled = delta_hyperbolicity(
            &g,
            DeltaMode::Sampled {
                m: usize::MAX,
                seed: trial,
            },
        )
        .unwrap();
        assert_eq!(exact, sampled);
        assert_eq!(exact.counts, brute_force(&g), "trial {trial}");
    }
}

#[test]
fn sampled_subset_tracks_exact_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = random_graph(&mut rng, 12, 0.2, true);
    let exact = delta_hyperbolicity(&g, DeltaMode::Exact).unwrap();
    assert_eq!(exact.quadruples, 495);
    let sampled = delta_hyperbolicity(&g, DeltaMode::Sampled { m: 200, seed: 1 }).unwrap();
    assert_eq!(sampled.quadruples, 200);
    assert!(sampled.max_delta <= exact.max_delta);
    for (i, &c) in sampled.counts.iter().enumerate() {
        assert!(c <= exact.counts[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn save_then_load_is_identity(seed in 0u64..10_000, n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 0.2, false);
        let dir = tempfile::tempdir().unwrap();
        let raw = LoadOptions { normalize: false };
        save_dataset(&g, dir.path()).unwrap();
        let once = load_dataset_with(dir.path(), raw).unwrap();
        save_dataset(&once, dir.path()).unwrap();
        let twice = load_dataset_with(dir.path(), raw).unwrap();
        for ds in [&once, &twice] {
            prop_assert_eq!(ds.n, g.n);
            prop_assert_eq!(&ds.edges, &g.edges);
            prop_assert_eq!(&ds.labels, &g.labels);
            prop_assert_eq!((&ds.train, &ds.val, &ds.test), (&g.train, &g.val, &g.test));
            prop_assert_eq!(&ds.features, &g.features);
        }
    }

    #[test]
    fn mixing_never_crosses_sources(seed in 0u64..10_000, na in 1usize..15, nb in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_graph(&mut rng, na, 0.3, false);
        let b = random_graph(&mut rng, nb, 0.3, true);
        let m = mix_datasets(&a, &b, Split::default(), seed).unwrap();
        prop_assert_eq!(m.n, na + nb);
        prop_assert_eq!(m.edges.len(), a.edges.len() + b.edges.len());
        prop_assert!(m.edges.iter().all(|&(u, v)| (u < na) == (v < na)));
        let mut all: Vec<usize> = m.train.iter().chain(&m.val).chain(&m.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m.n).collect::<Vec<_>>());
        prop_assert!(m.labels[na..].iter().all(|&l| l >= a.num_classes));
    }
}
