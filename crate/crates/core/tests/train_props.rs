use hamgnn::graphdata::{synth_dataset, GraphDataset, SynthKind};
use hamgnn::model::{Decoder, ModelConfig, ModelKind, ModelParams};
use hamgnn::odeint::{IntegrationConfig, Method};
use hamgnn::train::{
    fit, fit_observed, gradient_check, jitter_biases, layer_sweep, read_history_csv, write_history_csv, Task,
    TrainConfig, TrainError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sbm() -> GraphDataset {
    let kind = SynthKind::Sbm {
        sizes: vec![20, 20],
        p_in: 0.5,
        p_out: 0.01,
    };
    synth_dataset(&kind, 0).unwrap()
}

fn model(variant: ModelKind, hidden: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        layers,
        variant,
        ..ModelConfig::default()
    }
}

#[test]
fn sbm_flexible_separates_blocks() {
    let ds = sbm();
    let r = fit::<f64>(&model(ModelKind::Flexible, 64, 2), &TrainConfig::default(), &ds).unwrap();
    assert!(
        r.history.test_at_best >= 0.95,
        "test accuracy {}",
        r.history.test_at_best
    );
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let ds = sbm();
    let mc = model(ModelKind::Geodesic, 8, 2);
    let tc = TrainConfig {
        lr: 0.0,
        max_epochs: 5,
        patience: 5,
        ..TrainConfig::default()
    };
    let r = fit::<f64>(&mc, &tc, &ds).unwrap();
    let init = ModelParams::<f64>::init(
        &mc,
        ds.num_features(),
        ds.num_classes,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(r.params, init);
    let first = r.history.records[0].train_loss;
    assert!(r.history.records.iter().all(|e| e.train_loss == first));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let kind = SynthKind::Sbm {
        sizes: vec![4, 4],
        p_in: 0.8,
        p_out: 0.2,
    };
    let ds = synth_dataset(&kind, 3).unwrap();
    let kinds = [
        ModelKind::Geodesic,
        ModelKind::Flexible,
        ModelKind::Convex,
        ModelKind::Relaxed,
        ModelKind::Symplectic,
        ModelKind::GeodesicRelaxed,
        ModelKind::HigherDim,
        ModelKind::VanillaOde,
        ModelKind::Mlp,
    ];
    for (i, variant) in kinds.into_iter().enumerate() {
        let mc = ModelConfig {
            integration: IntegrationConfig::new(Method::Euler, 1.0, 0.5),
            ..model(variant, 4, 1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut params = ModelParams::<f64>::init(&mc, ds.num_features(), ds.num_classes, &mut rng).unwrap();
        jitter_biases(&mut params, &mut rng);
        let checks = gradient_check(&mc, &params, &ds, 1e-6).unwrap();
        assert_eq!(checks.len(), params.named_tensors().len());
        for c in checks {
            assert!(c.rel_error <= 1e-4, "{variant:?} {}: {}", c.name, c.rel_error);
        }
    }
}

#[test]
fn fixed_seed_gives_identical_histories() {
    let ds = sbm();
    let tc = TrainConfig {
        max_epochs: 20,
        patience: 20,
        seed: 5,
        ..TrainConfig::default()
    };
    let mc = model(ModelKind::Symplectic, 8, 2);
    let a = fit::<f64>(&mc, &tc, &ds).unwrap();
    let b = fit::<f64>(&mc, &tc, &ds).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);

    let link = TrainConfig { task: Task::Link, ..tc };
    let lm = ModelConfig {
        decoder: Decoder::Link,
        ..model(ModelKind::Flexible, 8, 1)
    };
    let a = fit::<f64>(&lm, &link, &ds).unwrap();
    let b = fit::<f64>(&lm, &link, &ds).unwrap();
    assert_eq!(a.history, b.history);
}

#[test]
fn loss_falls_for_every_variant() {
    let ds = sbm();
    let tc = TrainConfig {
        max_epochs: 50,
        patience: 50,
        ..TrainConfig::default()
    };
    for variant in [
        ModelKind::Geodesic,
        ModelKind::Flexible,
        ModelKind::Convex,
        ModelKind::Relaxed,
        ModelKind::Symplectic,
        ModelKind::GeodesicRelaxed,
        ModelKind::HigherDim,
        ModelKind::VanillaOde,
        ModelKind::AggregateOnly,
        ModelKind::Mlp,
    ] {
        let r = fit::<f64>(&model(variant, 16, 2), &tc, &ds).unwrap();
        let h = &r.history.records;
        assert_eq!(h.len(), 50, "{variant:?}");
        assert!(
            h[49].train_loss < h[0].train_loss,
            "{variant:?}: {} -> {}",
            h[0].train_loss,
            h[49].train_loss
        );
    }
}

#[test]
fn convex_weights_stay_feasible() {
    let ds = sbm();
    let tc = TrainConfig {
        max_epochs: 40,
        patience: 40,
        lr: 0.05,
        ..TrainConfig::default()
    };
    let mut steps = 0;
    fit_observed::<f64>(&model(ModelKind::Convex, 8, 2), &tc, &ds, |_, p| {
        assert!(p.is_feasible());
        steps += 1;
    })
    .unwrap();
    assert_eq!(steps, 39);
}

#[test]
fn reported_test_metric_comes_from_best_validation_epoch() {
    let ds = sbm();
    let tc = TrainConfig {
        max_epochs: 60,
        patience: 10,
        seed: 2,
        ..TrainConfig::default()
    };
    let r = fit::<f64>(&model(ModelKind::Relaxed, 8, 2), &tc, &ds).unwrap();
    let h = &r.history;
    let best = &h.records[h.best_epoch - 1];
    assert_eq!(best.epoch, h.best_epoch);
    assert_eq!((h.best_val, h.test_at_best), (best.val_metric, best.test_metric));
    let first_max = h
        .records
        .iter()
        .fold(&h.records[0], |b, r| if r.val_metric > b.val_metric { r } else { b });
    assert_eq!(first_max.epoch, h.best_epoch);
    if h.stopped_early {
        assert_eq!(h.records.len(), h.best_epoch + 10);
    }
}

#[test]
fn overflow_reports_divergence() {
    let ds = sbm();
    let tc = TrainConfig {
        lr: 1e300,
        ..TrainConfig::default()
    };
    let err = fit::<f64>(&model(ModelKind::Flexible, 8, 1), &tc, &ds).unwrap_err();
    match err {
        TrainError::Diverged { epoch, last_finite, .. } => {
            assert_eq!(epoch, 2);
            assert!(last_finite.named_tensors().iter().all(|(_, t)| t.is_finite()));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn link_training_ranks_held_out_edges() {
    let kind = SynthKind::Sbm {
        sizes: vec![30, 30],
        p_in: 0.3,
        p_out: 0.01,
    };
    let ds = synth_dataset(&kind, 1).unwrap();
    let mc = ModelConfig {
        decoder: Decoder::Link,
        ..model(ModelKind::Flexible, 16, 2)
    };
    let tc = TrainConfig {
        task: Task::Link,
        max_epochs: 100,
        patience: 100,
        ..TrainConfig::default()
    };
    let r = fit::<f64>(&mc, &tc, &ds).unwrap();
    assert!(r.history.test_at_best >= 0.8, "auc {}", r.history.test_at_best);
}

#[test]
fn sweep_and_history_file() {
    let ds = sbm();
    let tc = TrainConfig {
        max_epochs: 10,
        patience: 10,
        ..TrainConfig::default()
    };
    let mc = model(ModelKind::Flexible, 8, 1);
    let rows = layer_sweep::<f64>(&mc, &tc, &ds, &[1]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows, layer_sweep::<f64>(&mc, &tc, &ds, &[1]).unwrap());
    assert!(layer_sweep::<f64>(&mc, &tc, &ds, &[]).is_err());

    let r = fit::<f64>(&mc, &tc, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    write_history_csv(&path, &r.history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_metric,test_metric\n"));
    assert_eq!(read_history_csv(&path).unwrap(), r.history.records);
}

#[test]
fn runs_in_single_precision() {
    let ds = sbm();
    let tc = TrainConfig {
        max_epochs: 30,
        patience: 30,
        ..TrainConfig::default()
    };
    let r = fit::<f32>(&model(ModelKind::Flexible, 8, 2), &tc, &ds).unwrap();
    assert!(r.history.records[29].train_loss < r.history.records[0].train_loss);
}
