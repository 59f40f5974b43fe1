mod common;

use std::sync::Arc;

use bldclass::graphgen::{LabelPolicy, Mode};
use bldclass_model::checkpoint::{checkpoint_from_str, checkpoint_to_string};
use bldclass_model::model::Classifier;
use bldclass_model::optim::Adam;
use bldclass_model::tape::{Matrix, Tape};
use bldclass_model::{load_checkpoint, save_checkpoint, train, Architecture, Error, EvalScope, ModelSpec};
use proptest::prelude::*;

fn ce(logits: Matrix, rows: Vec<usize>, labels: Vec<usize>) -> f64 {
    let mut t = Tape::new();
    let z = t.constant(logits);
    let l = t.cross_entropy(z, Arc::from(rows), Arc::from(labels));
    t.value(l)[[0, 0]]
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_k() {
    for k in 2..10 {
        let v = ce(Matrix::from_elem((3, k), 0.7), vec![0, 1, 2], vec![0, k - 1, 1]);
        assert!((v - (k as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_with_a_wide_margin_is_near_zero() {
    let mut z = Matrix::zeros((1, 5));
    z[[0, 3]] = 20.0;
    let v = ce(z, vec![0], vec![3]);
    assert!(v >= 0.0 && v < 1e-8, "{v}");
}

proptest! {
    #[test]
    fn cross_entropy_matches_log_sum_exp(
        vals in proptest::collection::vec(-30.0f64..30.0, 12),
        labels in proptest::collection::vec(0usize..4, 3),
    ) {
        let z = Matrix::from_shape_vec((3, 4), vals.clone()).unwrap();
        let v = ce(z, vec![0, 1, 2], labels.clone());
        let mut want = 0.0;
        for r in 0..3 {
            let row = &vals[r * 4..r * 4 + 4];
            want += row.iter().map(|x| x.exp()).sum::<f64>().ln() - row[labels[r]];
        }
        want /= 3.0;
        prop_assert!((v - want).abs() <= 1e-10 * want.abs().max(1.0));
    }
}

#[test]
fn adam_first_step_moves_each_weight_by_the_learning_rate() {
    let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8, 0.0, &[(1, 3)]);
    let mut p = vec![ndarray::array![[1.0, -2.0, 0.5]]];
    let g = vec![ndarray::array![[0.3, -4.0, 1e-3]]];
    adam.step(&mut p, &g).unwrap();
    let want = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
    for (a, b) in p[0].iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn adam_leaves_weights_with_zero_gradient_alone() {
    let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8, 0.0, &[(2, 2)]);
    let start = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
    let mut p = vec![start.clone()];
    for _ in 0..5 {
        adam.step(&mut p, &[Matrix::zeros((2, 2))]).unwrap();
    }
    assert_eq!(p[0], start);
}

#[test]
fn adam_matches_a_scalar_recurrence() {
    let (lr, b1, b2, eps, wd) = (0.05, 0.8, 0.99, 1e-6, 0.01);
    let mut adam = Adam::new(lr, b1, b2, eps, wd, &[(1, 1)]);
    let mut p = vec![Matrix::from_elem((1, 1), 2.0)];
    let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
    for step in 1..=10 {
        // gradient of (x - 1)^3
        let g = 3.0 * (x - 1.0).powi(2);
        adam.step(&mut p, &[Matrix::from_elem((1, 1), g)]).unwrap();
        let g = g + wd * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(step));
        let vh = v / (1.0 - b2.powi(step));
        x -= lr * mh / (vh.sqrt() + eps);
        assert!((p[0][[0, 0]] - x).abs() <= 1e-12, "step {step}");
    }
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8, 0.0, &[(1, 2)]);
    let mut p = vec![Matrix::zeros((1, 2))];
    let err = adam.step(&mut p, &[ndarray::array![[1.0, f64::NAN]]]).unwrap_err();
    assert!(err.is_divergence());
    let err = adam.step(&mut p, &[ndarray::array![[f64::INFINITY, 0.0]]]).unwrap_err();
    assert!(err.is_divergence());
    assert_eq!(p[0], Matrix::zeros((1, 2)));
    assert!(matches!(adam.step(&mut p, &[Matrix::zeros((2, 2))]).unwrap_err(), Error::Shape(_)));
}

fn quick(arch: Architecture) -> ModelSpec {
    ModelSpec { hidden: 8, heads: 2, batch_size: 8, max_epochs: 4, ..ModelSpec::desk(arch) }
}

#[test]
fn frozen_validation_loss_stops_after_patience_epochs() {
    let ds = common::small(1);
    for arch in [Architecture::Mlp, Architecture::Sage] {
        let spec = ModelSpec { lr: 1e-300, max_epochs: 50, patience: 5, ..quick(arch) };
        let (_, r) = train(&ds, &spec, 3).unwrap();
        assert!(r.early_stopped);
        assert_eq!(r.stopped_epoch, 6, "{arch}");
        assert_eq!(r.best_epoch, 1);
        assert!(r.val_loss.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn training_restores_the_best_validation_parameters() {
    let ds = common::small(2);
    let spec = ModelSpec { max_epochs: 12, patience: 3, ..quick(Architecture::Gcn) };
    let (model, r) = train(&ds, &spec, 5).unwrap();
    let best = r.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.val_loss[r.best_epoch - 1], best);
    let Classifier::Neural(net) = &model.classifier else { panic!("neural model expected") };
    let source: Vec<_> = ds.subgraphs_in(bldclass::graphgen::Split::Val).collect();
    let targets: Vec<Vec<usize>> =
        source.iter().map(|sg| sg.flagged_nodes(bldclass::graphgen::Split::Val, LabelPolicy::All)).collect();
    let mut batches = Vec::new();
    for (sgs, tg) in source.chunks(spec.batch_size).zip(targets.chunks(spec.batch_size)) {
        batches.push(bldclass_model::batch::collate(sgs, tg, spec.gnn_layers, spec.xi, &ds.normalization).unwrap());
    }
    let v = bldclass_model::train::mean_loss(net, &batches).unwrap();
    assert!((v - best).abs() < 1e-12, "{v} vs {best}");
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let ds = common::small(3);
    for arch in [Architecture::Mlp, Architecture::Transformer, Architecture::Forest] {
        let spec = quick(arch);
        let (m1, r1) = train(&ds, &spec, 11).unwrap();
        let (m2, r2) = train(&ds, &spec, 11).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        if arch.is_neural() {
            let (m3, _) = train(&ds, &spec, 12).unwrap();
            assert_ne!(m1, m3);
        }
    }
}

#[test]
fn full_batch_training_loss_decreases_monotonically() {
    let ds = common::plant(common::small(4), 0);
    let spec = ModelSpec {
        dropout: 0.0,
        batch_size: 100_000,
        lr: 1e-2,
        max_epochs: 40,
        patience: 100,
        ..ModelSpec::desk(Architecture::Mlp)
    };
    let (model, r) = train(&ds, &spec, 1).unwrap();
    assert_eq!(r.train_loss.len(), 40);
    for w in r.train_loss.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(r.train_loss[39] < 0.5 * r.train_loss[0]);
    let report = model.evaluate(&ds, EvalScope::Flagged).unwrap();
    assert!(report.oa > 0.9, "{}", report.oa);
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let ds = common::small(5);
    let spec = ModelSpec { lr: 1e250, ..quick(Architecture::Mlp) };
    let err = train(&ds, &spec, 0).unwrap_err();
    match err {
        Error::Divergence { epoch, .. } => assert_eq!(epoch, Some(1)),
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn center_policy_uses_fewer_loss_terms() {
    let all = common::dataset(6, 400, 40, Mode::Distance, LabelPolicy::All);
    let center = all.clone().with_label_policy(LabelPolicy::Center);
    let spec = ModelSpec { max_epochs: 1, ..quick(Architecture::Sage) };
    let (_, ra) = train(&all, &spec, 0).unwrap();
    let (_, rc) = train(&center, &spec, 0).unwrap();
    let n_train = all.subgraphs_in(bldclass::graphgen::Split::Train).filter(|s| s.labels[s.center].is_some()).count();
    assert_eq!(rc.loss_terms[0], n_train);
    assert!(ra.loss_terms[0] > rc.loss_terms[0]);
}

#[test]
fn invalid_specs_are_rejected_before_training() {
    let ds = common::small(7);
    let spec = ModelSpec { heads: 3, hidden: 8, ..quick(Architecture::Gat) };
    assert!(matches!(train(&ds, &spec, 0).unwrap_err(), Error::Core(bldclass::Error::InvalidConfig(_))));
    let spec = ModelSpec { fanouts: Some(vec![2]), ..quick(Architecture::Transformer) };
    assert!(matches!(train(&ds, &spec, 0).unwrap_err(), Error::Core(bldclass::Error::InvalidConfig(_))));
}

#[test]
fn checkpoints_round_trip_bit_for_bit() {
    let ds = common::small(8);
    let dir = tempfile::tempdir().unwrap();
    for arch in [Architecture::Transformer, Architecture::Mlp, Architecture::Tree, Architecture::Forest] {
        let (model, _) = train(&ds, &quick(arch), 2).unwrap();
        let path = dir.path().join(format!("{arch}.json"));
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        if let (Classifier::Neural(a), Classifier::Neural(b)) = (&model.classifier, &back.classifier) {
            for (x, y) in a.params.values.iter().zip(&b.params.values) {
                assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
        let p1 = model.predict_split(&ds, bldclass::graphgen::Split::Test, EvalScope::Flagged).unwrap();
        let p2 = back.predict_split(&ds, bldclass::graphgen::Split::Test, EvalScope::Flagged).unwrap();
        assert_eq!(p1, p2);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ds = common::small(9);
    let (model, _) = train(&ds, &quick(Architecture::Sage), 2).unwrap();
    let text = checkpoint_to_string(&model).unwrap();
    assert!(checkpoint_from_str(&text.replacen("bldclass-checkpoint", "other", 1)).is_err());
    assert!(checkpoint_from_str(&text.replacen("\"version\":1", "\"version\":9", 1)).is_err());
    assert!(checkpoint_from_str(&text[..text.len() / 2]).is_err());

    let mut broken = model.clone();
    if let Classifier::Neural(net) = &mut broken.classifier {
        net.params.values[0] = Matrix::zeros((2, 2));
    }
    let err = checkpoint_from_str(&checkpoint_to_string(&broken).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));

    let mut broken = model.clone();
    if let Classifier::Neural(net) = &mut broken.classifier {
        net.params.values[1][[0, 0]] = f64::NAN;
    }
    assert!(checkpoint_from_str(&checkpoint_to_string(&broken).unwrap()).is_err());
}

#[test]
fn models_refuse_datasets_with_another_label_space() {
    let ds = common::small(10);
    let (model, _) = train(&ds, &quick(Architecture::Tree), 0).unwrap();
    let binary = bldclass::graphgen::remap_task(&ds, bldclass::classes::Task::Binary2).unwrap();
    assert!(model.evaluate(&binary, EvalScope::Flagged).is_err());
}
