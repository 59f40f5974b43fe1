use bldclass_model::tape::Matrix;
use bldclass_model::tree::{best_split, gini, majority, DecisionTree, ForestParams, RandomForest, TreeNode, TreeParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALL: TreeParams = TreeParams { max_depth: 30, max_features: None };

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[test]
fn gini_examples() {
    assert_eq!(gini(&[5, 0]), 0.0);
    assert_eq!(gini(&[2, 2]), 0.5);
    assert!((gini(&[1, 1, 1]) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(gini(&[]), 0.0);
    assert_eq!(majority(&[3, 5, 5]), 1);
    assert_eq!(majority(&[0, 0]), 0);
}

#[test]
fn separable_data_needs_one_split() {
    let x = Matrix::from_shape_vec((6, 2), vec![0.1, 9.0, 0.2, 1.0, 0.3, 5.0, 0.7, 2.0, 0.8, 8.0, 0.9, 3.0]).unwrap();
    let y = [0, 0, 0, 1, 1, 1];
    let t = DecisionTree::fit(&x, &y, 2, ALL, &mut rng()).unwrap();
    assert_eq!(t.depth(), 1);
    assert_eq!(t.n_leaves(), 2);
    match &t.nodes[0] {
        TreeNode::Split { feature, threshold, .. } => {
            assert_eq!(*feature, 0);
            assert!((threshold - 0.5).abs() < 1e-15);
        }
        other => panic!("root should split, got {other:?}"),
    }
    assert_eq!(t.predict(&x), y.to_vec());
    assert_eq!(t.importance, vec![1.0, 0.0]);
}

#[test]
fn pure_data_gives_a_single_leaf() {
    let x = Matrix::from_shape_fn((5, 3), |(i, j)| (i * j) as f64);
    let t = DecisionTree::fit(&x, &[2; 5], 4, ALL, &mut rng()).unwrap();
    assert_eq!(t.nodes.len(), 1);
    assert_eq!(t.nodes[0], TreeNode::Leaf { class: 2, counts: vec![0, 0, 5, 0] });
    assert_eq!(t.importance, vec![0.0; 3]);
}

#[test]
fn depth_limit_is_respected() {
    let mut r = rng();
    let x = Matrix::from_shape_fn((200, 4), |_| r.gen_range(0.0..1.0));
    let y: Vec<usize> = (0..200).map(|_| r.gen_range(0..3)).collect();
    for d in 0..6 {
        let t = DecisionTree::fit(&x, &y, 3, TreeParams { max_depth: d, max_features: None }, &mut rng()).unwrap();
        assert!(t.depth() <= d);
    }
    let deep = DecisionTree::fit(&x, &y, 3, ALL, &mut rng()).unwrap();
    assert_eq!(deep.predict(&x), y, "an unlimited tree memorizes distinct rows");
}

/// Weighted child impurity of splitting at `t` on feature `f`, computed
/// from scratch.
fn split_impurity(x: &Matrix, y: &[usize], k: usize, f: usize, t: f64) -> Option<f64> {
    let mut l = vec![0; k];
    let mut r = vec![0; k];
    for (i, &c) in y.iter().enumerate() {
        if x[[i, f]] <= t {
            l[c] += 1;
        } else {
            r[c] += 1;
        }
    }
    let (nl, nr): (usize, usize) = (l.iter().sum(), r.iter().sum());
    if nl == 0 || nr == 0 {
        return None;
    }
    let g = |c: &[usize], n: usize| 1.0 - c.iter().map(|&v| (v as f64 / n as f64).powi(2)).sum::<f64>();
    Some((nl as f64 * g(&l, nl) + nr as f64 * g(&r, nr)) / y.len() as f64)
}

proptest! {
    #[test]
    fn best_split_matches_exhaustive_search(
        vals in proptest::collection::vec(0u8..6, 12..40),
        seed in 0u64..1000,
    ) {
        let n = vals.len() / 3;
        let x = Matrix::from_shape_fn((n, 3), |(i, j)| vals[i * 3 + j] as f64 * 0.5);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
        let rows: Vec<usize> = (0..n).collect();
        let mut oracle: Option<f64> = None;
        for f in 0..3 {
            for i in 0..n {
                if let Some(v) = split_impurity(&x, &y, 3, f, x[[i, f]]) {
                    oracle = Some(oracle.map_or(v, |o: f64| o.min(v)));
                }
            }
        }
        let got = best_split(&x, &y, &rows, 3, &[0, 1, 2]);
        match (got, oracle) {
            (None, None) => {}
            (Some(s), Some(o)) => {
                prop_assert!((s.impurity - o).abs() < 1e-12);
                let direct = split_impurity(&x, &y, 3, s.feature, s.threshold).unwrap();
                prop_assert!((direct - o).abs() < 1e-12);
            }
            (g, o) => prop_assert!(false, "search {:?} vs oracle {:?}", g, o),
        }
    }
}

#[test]
fn one_tree_forest_without_bagging_equals_a_tree() {
    let mut r = rng();
    let x = Matrix::from_shape_fn((150, 5), |_| r.gen_range(-1.0..1.0));
    let y: Vec<usize> = (0..150).map(|i| usize::from(x[[i, 0]] + x[[i, 3]] > 0.2) + usize::from(x[[i, 1]] > 0.5)).collect();
    let params = TreeParams { max_depth: 6, max_features: None };
    let tree = DecisionTree::fit(&x, &y, 3, params, &mut rng()).unwrap();
    let forest = RandomForest::fit(&x, &y, 3, ForestParams { n_trees: 1, tree: params, bootstrap: false }, 9).unwrap();
    assert_eq!(forest.trees[0].nodes, tree.nodes);
    assert_eq!(forest.predict(&x), tree.predict(&x));
    assert_eq!(forest.importance, tree.importance);
}

#[test]
fn importances_are_normalized() {
    let mut r = rng();
    let x = Matrix::from_shape_fn((120, 6), |_| r.gen_range(0.0..1.0));
    let y: Vec<usize> = (0..120).map(|i| usize::from(x[[i, 2]] > 0.5)).collect();
    let tree = DecisionTree::fit(&x, &y, 2, ALL, &mut rng()).unwrap();
    assert!((tree.importance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let params = ForestParams { n_trees: 12, tree: TreeParams { max_depth: 8, max_features: Some(2) }, bootstrap: true };
    let forest = RandomForest::fit(&x, &y, 2, params, 4).unwrap();
    assert!((forest.importance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(forest.importance.iter().all(|&v| v >= 0.0));
    let top = (0..6).max_by(|&a, &b| forest.importance[a].total_cmp(&forest.importance[b])).unwrap();
    assert_eq!(top, 2);
}

#[test]
fn forests_are_reproducible_and_seed_dependent() {
    let mut r = rng();
    let x = Matrix::from_shape_fn((100, 4), |_| r.gen_range(0.0..1.0));
    let y: Vec<usize> = (0..100).map(|_| r.gen_range(0..2)).collect();
    let params = ForestParams { n_trees: 8, tree: TreeParams { max_depth: 5, max_features: Some(2) }, bootstrap: true };
    let a = RandomForest::fit(&x, &y, 2, params, 1).unwrap();
    let b = RandomForest::fit(&x, &y, 2, params, 1).unwrap();
    let c = RandomForest::fit(&x, &y, 2, params, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_training_data_is_rejected() {
    let x = Matrix::zeros((3, 2));
    assert!(DecisionTree::fit(&x, &[0, 1], 2, ALL, &mut rng()).is_err());
    assert!(DecisionTree::fit(&x, &[0, 1, 2], 2, ALL, &mut rng()).is_err());
    let mut bad = x.clone();
    bad[[1, 1]] = f64::NAN;
    assert!(DecisionTree::fit(&bad, &[0, 1, 0], 2, ALL, &mut rng()).is_err());
    assert!(RandomForest::fit(&x, &[0, 1, 0], 2, ForestParams { n_trees: 0, tree: ALL, bootstrap: false }, 0).is_err());
}
