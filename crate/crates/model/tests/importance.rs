mod common;

use bldclass::feature::FeatureGroup;
use bldclass::graphgen::{LabelPolicy, Mode};
use bldclass_model::importance::impurity_importance;
use bldclass_model::model::Classifier;
use bldclass_model::{cross_validate, permutation_importance, train, Architecture, EvalScope, ModelSpec};

const PLANTED: usize = 4;

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

#[test]
fn planted_signal_ranks_first() {
    let mut hits = [0usize; 2];
    for seed in 0..10u64 {
        let ds = common::plant(common::dataset(seed, 300, 30, Mode::Distance, LabelPolicy::All), PLANTED);
        let spec = ModelSpec { n_trees: 10, ..ModelSpec::desk(Architecture::Forest) };
        let (model, _) = train(&ds, &spec, seed).unwrap();
        let imp = impurity_importance(&model).unwrap();
        hits[0] += usize::from(argmax(&imp) == PLANTED);
        let perm = permutation_importance(&model, &ds, EvalScope::Flagged, seed).unwrap();
        hits[1] += usize::from(perm.ranked()[0].name == perm.features[PLANTED].name);
        let group = perm.groups.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert_eq!(group, FeatureGroup::BuildingLevel);
    }
    assert!(hits[0] >= 9, "impurity ranking found the planted column {} times", hits[0]);
    assert!(hits[1] >= 9, "permutation ranking found the planted column {} times", hits[1]);
}

#[test]
fn a_single_tree_relies_on_the_planted_column_alone() {
    let ds = common::plant(common::small(1), PLANTED);
    let (model, _) = train(&ds, &ModelSpec::desk(Architecture::Tree), 0).unwrap();
    let imp = impurity_importance(&model).unwrap();
    assert!((imp[PLANTED] - 1.0).abs() < 1e-12, "{}", imp[PLANTED]);
    let perm = permutation_importance(&model, &ds, EvalScope::Centers, 0).unwrap();
    assert!((perm.baseline_kappa - 1.0).abs() < 1e-12);
    for (c, f) in perm.features.iter().enumerate() {
        if c != PLANTED {
            assert_eq!(f.drop, 0.0, "{}", f.name);
        }
    }
}

#[test]
fn features_with_zero_input_weights_have_zero_importance() {
    let ds = common::small(2);
    let spec = ModelSpec { hidden: 8, max_epochs: 3, ..ModelSpec::desk(Architecture::Sage) };
    let (mut model, _) = train(&ds, &spec, 0).unwrap();
    let Classifier::Neural(net) = &mut model.classifier else { panic!("neural model expected") };
    let bldclass_model::layers::GnnLayer::Sage(first) = net.gnn[0].clone() else { panic!("sage layer expected") };
    for c in FeatureGroup::LandUse.range() {
        net.params.values[first.w_self].row_mut(c).fill(0.0);
        net.params.values[first.w_neigh].row_mut(c).fill(0.0);
    }
    let perm = permutation_importance(&model, &ds, EvalScope::Flagged, 3).unwrap();
    for c in FeatureGroup::LandUse.range() {
        assert_eq!(perm.features[c].drop, 0.0);
    }
    let land = perm.groups.iter().find(|g| g.0 == FeatureGroup::LandUse).unwrap();
    assert_eq!(land.1, 0.0);
    assert!(perm.impurity.is_none());
}

#[test]
fn cross_validation_runs_every_split_and_seed() {
    let ds = common::small(3);
    let spec = ModelSpec::desk(Architecture::Tree);
    let cv = cross_validate(&ds, &spec, 3, 2, 10, EvalScope::Flagged, 2).unwrap();
    assert_eq!(cv.runs.len(), 6);
    assert_eq!(cv.aggregate.runs, 6);
    assert!(cv.aggregate.excluded.is_empty());
    let pairs: Vec<(usize, u64)> = cv.runs.iter().map(|r| (r.split, r.seed)).collect();
    assert_eq!(pairs, vec![(0, 10), (0, 11), (1, 10), (1, 11), (2, 10), (2, 11)]);
    // an exhaustive tree ignores its seed, so runs within a split agree
    for s in 0..3 {
        assert_eq!(cv.runs[2 * s].report, cv.runs[2 * s + 1].report);
    }
    assert_ne!(cv.runs[0].report, cv.runs[2].report);
    let first = train(&ds, &spec, 10).unwrap().0.evaluate(&ds, EvalScope::Flagged).unwrap();
    assert_eq!(cv.runs[0].report.as_ref().unwrap(), &first);
    let kappas: Vec<f64> = cv.runs.iter().map(|r| r.report.as_ref().unwrap().kappa.unwrap()).collect();
    let mean = kappas.iter().sum::<f64>() / 6.0;
    assert!((cv.aggregate.kappa.mean - mean).abs() < 1e-12);
}

#[test]
fn diverged_runs_are_excluded_from_the_aggregate() {
    let ds = common::small(4);
    let spec = ModelSpec { lr: 1e250, hidden: 8, max_epochs: 2, ..ModelSpec::desk(Architecture::Mlp) };
    let cv = cross_validate(&ds, &spec, 1, 2, 0, EvalScope::Flagged, 1).unwrap();
    assert_eq!(cv.aggregate.runs, 0);
    assert_eq!(cv.aggregate.excluded.len(), 2);
    assert!(cv.runs.iter().all(|r| r.report.is_none() && r.error.is_some()));
    assert!(cv.aggregate.kappa.mean.is_nan());
}

#[test]
fn planted_column_carries_most_of_the_permutation_drop() {
    let ds = common::plant(common::dataset(5, 300, 30, Mode::Distance, LabelPolicy::All), PLANTED);
    let spec = ModelSpec { n_trees: 10, ..ModelSpec::desk(Architecture::Forest) };
    let (model, _) = train(&ds, &spec, 5).unwrap();
    let perm = permutation_importance(&model, &ds, EvalScope::Flagged, 5).unwrap();
    let total: f64 = perm.features.iter().map(|f| f.drop.max(0.0)).sum();
    assert!(perm.features[PLANTED].drop > 0.5 * total, "{} of {total}", perm.features[PLANTED].drop);
}

#[test]
fn single_run_cross_validation_has_no_spread_and_repeats() {
    let ds = common::small(6);
    let spec = ModelSpec { hidden: 8, max_epochs: 3, ..ModelSpec::desk(Architecture::Mlp) };
    let a = cross_validate(&ds, &spec, 1, 1, 7, EvalScope::Flagged, 1).unwrap();
    assert_eq!(a.aggregate.runs, 1);
    assert_eq!(a.aggregate.kappa.n, 1);
    assert_eq!(a.aggregate.kappa.std, 0.0);
    assert_eq!(a.aggregate.kappa.mean, a.runs[0].report.as_ref().unwrap().kappa.unwrap());
    let b = cross_validate(&ds, &spec, 1, 1, 7, EvalScope::Flagged, 1).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}
