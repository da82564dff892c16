use hamgnn::engine::{Activation, Binder, Bindings, Expr, MlpParams, Tensor};
use hamgnn::graphdata::{synth_dataset, GraphDataset, Split, SynthKind};
use hamgnn::hamiltonian::{EnergyNet, HamiltonianSpec, MetricNet, PhaseState};
use hamgnn::model::{
    aggregate, baseline_mlp, decode_class, decode_link, encode, predict, BoundModel, Decoder, GraphInputs, ModelConfig,
    ModelKind, ModelParams,
};
use hamgnn::odeint::{energy_drift, integrate, IntegrationConfig, Method};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n: usize, f: usize, p: f64) -> GraphDataset {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let (train, val, test) = hamgnn::graphdata::random_masks(n, Split::default(), 0);
    GraphDataset::new(
        "g",
        edges,
        Tensor::new(&[n, f], features).unwrap(),
        labels,
        train,
        val,
        test,
    )
    .unwrap()
}

fn cfg(variant: ModelKind, hidden: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        layers,
        variant,
        integration: IntegrationConfig::new(Method::Euler, 1.0, 0.5),
        ..ModelConfig::default()
    }
}

fn zero_fields(params: &mut ModelParams<f64>) {
    for layer in &mut params.layers {
        for t in layer.field.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        if let Some(q) = &mut layer.q_net {
            for t in q.tensors_mut() {
                t.data_mut().fill(0.0);
            }
        }
    }
}

// Plain loops over row-major vectors, sharing nothing with the library
// beyond the parameter storage.

fn affine_rows(x: &[f64], n: usize, net: &MlpParams<f64>) -> Vec<f64> {
    let layer = &net.layers()[0];
    let (fin, fout) = (layer.weight.rows(), layer.weight.cols());
    let mut out = vec![0.0; n * fout];
    for i in 0..n {
        for k in 0..fout {
            let mut s = layer.bias.data()[k];
            for j in 0..fin {
                s += x[i * fin + j] * layer.weight.at(j, k);
            }
            out[i * fout + k] = s;
        }
    }
    out
}

fn flexible_velocity(z: &[f64], d: usize, net: &MlpParams<f64>) -> Vec<f64> {
    let (w1, b1, w2) = (&net.layers()[0].weight, &net.layers()[0].bias, &net.layers()[1].weight);
    let width = w1.cols();
    let mut grad = vec![0.0; 2 * d];
    for k in 0..width {
        let a: f64 = b1.data()[k] + (0..2 * d).map(|j| z[j] * w1.at(j, k)).sum::<f64>();
        let s = (1.0 - a.tanh().powi(2)) * w2.at(k, 0);
        for (j, g) in grad.iter_mut().enumerate() {
            *g += w1.at(j, k) * s;
        }
    }
    let mut v = grad[d..].to_vec();
    v.extend(grad[..d].iter().map(|g| -g));
    v
}

fn geodesic_velocity(z: &[f64], d: usize, net: &MlpParams<f64>) -> Vec<f64> {
    let (w1, b1) = (&net.layers()[0].weight, &net.layers()[0].bias);
    let (w2, b2) = (&net.layers()[1].weight, &net.layers()[1].bias);
    let width = w1.cols();
    let (q, p) = z.split_at(d);
    let t: Vec<f64> = (0..width)
        .map(|k| (b1.data()[k] + (0..d).map(|j| q[j] * w1.at(j, k)).sum::<f64>()).tanh())
        .collect();
    let h: Vec<f64> = (0..d)
        .map(|i| b2.data()[i] + (0..width).map(|k| t[k] * w2.at(k, i)).sum::<f64>())
        .collect();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut v: Vec<f64> = (0..d).map(|i| (sig(h[i]) + 0.01) * p[i]).collect();
    for j in 0..d {
        let mut s = 0.0;
        for k in 0..width {
            let inner: f64 = (0..d)
                .map(|i| w2.at(k, i) * 0.5 * p[i] * p[i] * sig(h[i]) * (1.0 - sig(h[i])))
                .sum();
            s += w1.at(j, k) * (1.0 - t[k] * t[k]) * inner;
        }
        v.push(-s);
    }
    v
}

fn oracle_encode(kind: ModelKind, ds: &GraphDataset, params: &ModelParams<f64>, d: usize) -> Vec<f64> {
    let n = ds.n;
    let mut nbrs = vec![Vec::new(); n];
    for &(u, v) in &ds.edges {
        nbrs[u].push(v);
        nbrs[v].push(u);
    }
    let mut x = affine_rows(ds.features.data(), n, &params.compressor);
    for layer in &params.layers {
        let p = affine_rows(&x, n, layer.q_net.as_ref().unwrap());
        for i in 0..n {
            let mut z: Vec<f64> = x[i * d..(i + 1) * d]
                .iter()
                .chain(&p[i * d..(i + 1) * d])
                .copied()
                .collect();
            for _ in 0..2 {
                let v = match (&layer.field, kind) {
                    (
                        HamiltonianSpec::FlexibleH {
                            h_net: EnergyNet::Learned(net),
                        },
                        _,
                    ) => flexible_velocity(&z, d, net),
                    (
                        HamiltonianSpec::GeodesicMetric {
                            h_net: MetricNet::Learned(net),
                            ..
                        },
                        _,
                    ) => geodesic_velocity(&z, d, net),
                    _ => unreachable!(),
                };
                for (a, b) in z.iter_mut().zip(v) {
                    *a += 0.5 * b;
                }
            }
            x[i * d..(i + 1) * d].copy_from_slice(&z[..d]);
        }
        let prev = x.clone();
        for i in 0..n {
            for c in 0..d {
                let m = &nbrs[i];
                let mean = if m.is_empty() {
                    0.0
                } else {
                    m.iter().map(|&j| prev[j * d + c]).sum::<f64>() / m.len() as f64
                };
                x[i * d + c] = prev[i * d + c] + mean;
            }
        }
    }
    x
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "entry {i}: {x} vs {y}");
    }
}

#[test]
fn encode_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = random_graph(&mut rng, 5, 3, 0.5);
    let g = GraphInputs::new(&ds);
    for kind in [ModelKind::Flexible, ModelKind::Geodesic] {
        let c = cfg(kind, 4, 2);
        let params = ModelParams::init(&c, 3, 3, &mut rng).unwrap();
        let expected = oracle_encode(kind, &ds, &params, 4);
        let z = encode(&c, &params, &g).unwrap();
        assert_close(z.data(), &expected, 1e-10);

        let mut binder = Binder::new();
        let model = BoundModel::new(&c, &params, &mut binder).unwrap();
        let graph = model.encode(&g).unwrap();
        let z2 = hamgnn::engine::forward(&graph, binder.bindings()).unwrap();
        assert_close(z2.data(), &expected, 1e-10);
    }
}

#[test]
fn zero_dynamics_is_iterated_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = random_graph(&mut rng, 12, 4, 0.3);
    for kind in [
        ModelKind::Geodesic,
        ModelKind::Flexible,
        ModelKind::Symplectic,
        ModelKind::Relaxed,
    ] {
        let c = cfg(kind, 3, 3);
        let mut params = ModelParams::init(&c, 4, 3, &mut rng).unwrap();
        zero_fields(&mut params);
        let z = encode(&c, &params, &GraphInputs::new(&ds)).unwrap();
        let mut x = Tensor::new(&[12, 3], affine_rows(ds.features.data(), 12, &params.compressor)).unwrap();
        for _ in 0..3 {
            x = aggregate(&x, &ds.edges).unwrap();
        }
        assert_close(z.data(), x.data(), 1e-12);

        let ablation = ModelConfig {
            variant: ModelKind::AggregateOnly,
            ..c.clone()
        };
        let za = encode(&ablation, &params, &GraphInputs::new(&ds)).unwrap();
        assert_close(za.data(), x.data(), 1e-12);
    }
}

#[test]
fn single_isolated_node_is_orbit_endpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = GraphDataset::new(
        "one",
        vec![],
        Tensor::new(&[1, 2], vec![0.3, -0.7]).unwrap(),
        vec![0],
        vec![0],
        vec![],
        vec![],
    )
    .unwrap();
    let c = ModelConfig {
        integration: IntegrationConfig::new(Method::Rk4, 1.0, 0.1),
        ..cfg(ModelKind::Flexible, 3, 1)
    };
    let params = ModelParams::init(&c, 2, 1, &mut rng).unwrap();
    let z = encode(&c, &params, &GraphInputs::new(&ds)).unwrap();
    let q0 = affine_rows(ds.features.data(), 1, &params.compressor);
    let p0 = affine_rows(&q0, 1, params.layers[0].q_net.as_ref().unwrap());
    let state = PhaseState::new(&q0, &p0).unwrap();
    let traj = hamgnn::odeint::integrate_state(&params.layers[0].field, &state, &c.integration).unwrap();
    assert_eq!(z.data(), &traj.last().data()[..3]);
}

#[test]
fn momentum_initializer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 4;
    let q: Vec<f64> = (0..3 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Expr::constant(Tensor::new(&[3, d], q.clone()).unwrap());

    let random = MlpParams::<f64>::init(&[d, d], &[Activation::Identity], &mut rng);
    let vars = random.bind(&mut Binder::frozen(), "q");
    let p = hamgnn::engine::forward(&vars.apply(&x), &Bindings::new()).unwrap();
    assert_close(p.data(), &affine_rows(&q, 3, &random), 1e-12);

    let mut ident = MlpParams::<f64>::zeros(&[d, d], &[Activation::Identity]);
    ident.layers_mut()[0].weight = Tensor::identity(d);
    let vars = ident.bind(&mut Binder::frozen(), "q");
    assert_eq!(
        hamgnn::engine::forward(&vars.apply(&x), &Bindings::new())
            .unwrap()
            .data(),
        q.as_slice()
    );

    // zero momentum freezes a cogeodesic orbit
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = cfg(ModelKind::Geodesic, d, 1);
    let mut params = ModelParams::init(&c, d, 2, &mut rng).unwrap();
    for t in params.layers[0].q_net.as_mut().unwrap().tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let edgeless = GraphDataset::new(
        "e",
        vec![],
        Tensor::new(&[3, d], q).unwrap(),
        vec![0; 3],
        vec![],
        vec![],
        vec![],
    )
    .unwrap();
    let compressed = affine_rows(edgeless.features.data(), 3, &params.compressor);
    let z = encode(&c, &params, &GraphInputs::new(&edgeless)).unwrap();
    assert_eq!(z.data(), compressed.as_slice());
}

#[test]
fn compressor_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = random_graph(&mut rng, 6, 4, 0.3);
    let c = ModelConfig {
        layers: 1,
        final_aggregation: false,
        ..cfg(ModelKind::AggregateOnly, 4, 1)
    };
    let mut params = ModelParams::init(&c, 4, 2, &mut rng).unwrap();
    let g = GraphInputs::new(&ds);
    let z = encode(&c, &params, &g).unwrap();
    for i in 0..6 {
        let single = affine_rows(ds.features.row(i), 1, &params.compressor);
        assert_eq!(z.row(i), single.as_slice());
    }
    params.compressor.layers_mut()[0].weight = Tensor::identity(4);
    params.compressor.layers_mut()[0].bias = Tensor::zeros(&[4]);
    assert_eq!(encode(&c, &params, &g).unwrap(), ds.features);
    for t in params.compressor.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    assert!(encode(&c, &params, &g).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in [
        ModelKind::Flexible,
        ModelKind::Symplectic,
        ModelKind::HigherDim,
        ModelKind::VanillaOde,
    ] {
        let ds = random_graph(&mut rng, 15, 3, 0.25);
        let mut perm: Vec<usize> = (0..15).collect();
        perm.shuffle(&mut rng);
        let permuted = ds.permuted(&perm).unwrap();
        let c = cfg(kind, 4, 2);
        let params = ModelParams::init(&c, 3, 3, &mut rng).unwrap();
        let z = encode(&c, &params, &GraphInputs::new(&ds)).unwrap();
        let zp = encode(&c, &params, &GraphInputs::new(&permuted)).unwrap();
        for i in 0..15 {
            // neighbor sums may be accumulated in a different order
            assert_close(zp.row(perm[i]), z.row(i), 1e-13);
        }
    }
}

#[test]
fn class_decoder_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = Tensor::new(&[4, 3], (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    // selects features 2, 0, 1 as classes 0, 1, 2
    let mut head = MlpParams::<f64>::zeros(&[3, 3], &[Activation::Identity]);
    head.layers_mut()[0].weight =
        Tensor::matrix(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
    let preds = predict(&decode_class(&head, &z).unwrap());
    for i in 0..4 {
        let r = z.row(i);
        let best = (0..3).fold(0, |b, j| if r[j] > r[b] { j } else { b });
        assert_eq!(preds[i], [1, 2, 0][best]);
    }
    let random = MlpParams::<f64>::init(&[3, 5], &[Activation::Identity], &mut rng);
    assert_close(
        decode_class(&random, &z).unwrap().data(),
        &affine_rows(z.data(), 4, &random),
        1e-12,
    );
    assert!(decode_class(&random, &Tensor::zeros(&[2, 4])).is_err());
}

#[test]
fn link_probabilities_stay_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let z = Tensor::new(&[10, 4], (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let pairs: Vec<_> = (0..30).map(|_| (rng.gen_range(0..10), rng.gen_range(0..10))).collect();
        let p = decode_link(&z, &pairs).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn baseline_mlp_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ds = synth_dataset(
        &SynthKind::Sbm {
            sizes: vec![6, 6],
            p_in: 0.5,
            p_out: 0.1,
        },
        1,
    )
    .unwrap();
    let c = ModelConfig {
        variant: ModelKind::Mlp,
        hidden: 5,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(&c, ds.num_features(), 2, &mut rng).unwrap();
    let logits = baseline_mlp(&params, &ds).unwrap();

    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let mut two = params.compressor.clone();
    let second = MlpParams::new(vec![two.layers_mut()[1].clone()]).unwrap();
    let first = MlpParams::new(vec![two.layers_mut()[0].clone()]).unwrap();
    let h = relu(affine_rows(ds.features.data(), ds.n, &first));
    let h = relu(affine_rows(&h, ds.n, &second));
    let oracle = affine_rows(&h, ds.n, params.head.as_ref().unwrap());
    assert_close(logits.data(), &oracle, 1e-12);

    let mut rewired = ds.clone();
    rewired.edges = vec![(0, 11), (3, 4)];
    assert_eq!(baseline_mlp(&params, &rewired).unwrap(), logits);

    for t in params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let flat = baseline_mlp(&params, &ds).unwrap();
    assert!(flat.data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_orbits_conserve_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ds = random_graph(&mut rng, 20, 4, 0.2);
    for kind in [ModelKind::Geodesic, ModelKind::Flexible, ModelKind::Convex] {
        let c = cfg(kind, 4, 1);
        let params = ModelParams::init(&c, 4, 2, &mut rng).unwrap();
        let x = affine_rows(ds.features.data(), ds.n, &params.compressor);
        let p = affine_rows(&x, ds.n, params.layers[0].q_net.as_ref().unwrap());
        let rows: Vec<f64> = (0..ds.n)
            .flat_map(|i| {
                x[i * 4..(i + 1) * 4]
                    .iter()
                    .chain(&p[i * 4..(i + 1) * 4])
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();
        let z0 = Tensor::new(&[ds.n, 8], rows).unwrap();
        let spec = &params.layers[0].field;
        let field = spec.bind(&mut Binder::frozen(), "f").unwrap();

        let rk = integrate(&field, &z0, &IntegrationConfig::new(Method::Rk4, 1.0, 0.01)).unwrap();
        assert!(energy_drift(spec, &rk).unwrap().relative <= 1e-3, "{kind:?}");

        let coarse = integrate(&field, &z0, &IntegrationConfig::new(Method::Euler, 1.0, 0.01)).unwrap();
        let fine = integrate(&field, &z0, &IntegrationConfig::new(Method::Euler, 1.0, 0.005)).unwrap();
        let (dc, df) = (
            energy_drift(spec, &coarse).unwrap().max_abs,
            energy_drift(spec, &fine).unwrap().max_abs,
        );
        if dc < 1e-10 {
            // energy linear over the visited region: Euler conserves it up to roundoff
            assert!(df < 1e-10, "{kind:?}");
            continue;
        }
        let ratio = dc / df;
        assert!((1.8..=2.2).contains(&ratio), "{kind:?}: ratio {ratio}");
    }
}

#[test]
fn quadratic_energy_keeps_phase_norm() {
    let spec = HamiltonianSpec::<f64>::RelaxedH {
        h_net: EnergyNet::Quadratic,
        f_net: MlpParams::zeros(&[3, 3, 3], &[Activation::Tanh, Activation::Identity]),
    };
    let field = spec.bind(&mut Binder::frozen(), "f").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let z0 = Tensor::new(&[10, 6], (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let traj = integrate(&field, &z0, &IntegrationConfig::new(Method::Rk4, 3.0, 0.01)).unwrap();
    for i in 0..10 {
        let n0: f64 = z0.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        for z in &traj.states {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - n0).abs() <= 1e-9 * n0);
        }
    }
}

#[test]
fn link_model_has_no_head() {
    let c = ModelConfig {
        decoder: Decoder::Link,
        ..cfg(ModelKind::Flexible, 3, 1)
    };
    let params = ModelParams::<f64>::init(&c, 2, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(params.head.is_none());
    assert!(params.named_tensors().iter().all(|(n, _)| !n.starts_with("head")));
}
