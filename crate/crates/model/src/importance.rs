//! Permutation and impurity feature importance.

use bldclass::eval::cohens_kappa;
use bldclass::feature::{feature_names, FeatureGroup, NUM_NODE_FEATURES};
use bldclass::graphgen::{GraphDataset, LocalizedSubgraph, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Classifier, EvalScope, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub group: FeatureGroup,
    /// Kappa lost when the column is shuffled.
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub scope: EvalScope,
    pub baseline_kappa: f64,
    pub features: Vec<FeatureImportance>,
    /// Kappa lost when all columns of a group are shuffled together.
    pub groups: Vec<(FeatureGroup, f64)>,
    /// Impurity importance per feature (tree models only), summing to 1.
    pub impurity: Option<Vec<f64>>,
}

impl ImportanceReport {
    /// Features ranked by permutation drop, largest first.
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by(|a, b| b.drop.total_cmp(&a.drop));
        v
    }
}

fn kappa_of(model: &TrainedModel, subgraphs: &[LocalizedSubgraph], dataset: &GraphDataset, scope: EvalScope) -> Result<f64> {
    let refs: Vec<&LocalizedSubgraph> = subgraphs.iter().collect();
    let p = model.predict_subgraphs(&refs, &dataset.manifest.countries, Split::Test, scope)?;
    Ok(cohens_kappa(&p.pred, &p.truth).unwrap_or(0.0))
}

/// Shuffles `cols` jointly across every node of the test subgraphs and
/// records the kappa drop, once per column and once per feature group.
pub fn permutation_importance(
    model: &TrainedModel,
    dataset: &GraphDataset,
    scope: EvalScope,
    seed: u64,
) -> Result<ImportanceReport> {
    model.check_dataset(dataset)?;
    let test: Vec<LocalizedSubgraph> = dataset.subgraphs_in(Split::Test).cloned().collect();
    let baseline = kappa_of(model, &test, dataset, scope)?;
    let slots: Vec<(usize, usize)> =
        test.iter().enumerate().flat_map(|(g, sg)| (0..sg.len()).map(move |i| (g, i))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shuffled_drop = |cols: std::ops::Range<usize>, rng: &mut ChaCha8Rng| -> Result<f64> {
        let mut perm: Vec<usize> = (0..slots.len()).collect();
        perm.shuffle(rng);
        let mut work = test.clone();
        for (dst, &src) in slots.iter().zip(&perm) {
            let (sg, si) = slots[src];
            for c in cols.clone() {
                work[dst.0].features[dst.1].0[c] = test[sg].features[si].0[c];
            }
        }
        Ok(baseline - kappa_of(model, &work, dataset, scope)?)
    };
    let names = feature_names(&dataset.manifest.countries);
    let mut features = Vec::with_capacity(NUM_NODE_FEATURES);
    for (c, name) in names.into_iter().enumerate() {
        let drop = shuffled_drop(c..c + 1, &mut rng)?;
        features.push(FeatureImportance { name, group: FeatureGroup::of_column(c), drop });
    }
    let mut groups = Vec::with_capacity(FeatureGroup::ALL.len());
    for g in FeatureGroup::ALL {
        groups.push((g, shuffled_drop(g.range(), &mut rng)?));
    }
    Ok(ImportanceReport { scope, baseline_kappa: baseline, features, groups, impurity: impurity_importance(model) })
}

pub fn impurity_importance(model: &TrainedModel) -> Option<Vec<f64>> {
    match &model.classifier {
        Classifier::Tree(t) => Some(t.importance.clone()),
        Classifier::Forest(f) => Some(f.importance.clone()),
        Classifier::Neural(_) => None,
    }
}
