//! Trained classifiers, prediction and evaluation on dataset splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use bldclass::classes::{Degurba, Task};
use bldclass::eval::EvalReport;
use bldclass::feature::{CountryList, NodeFeatureVector, NormalizationStats, NUM_NODE_FEATURES};
use bldclass::graphgen::{GraphDataset, LabelPolicy, LocalizedSubgraph, Mode, Split};
use serde::{Deserialize, Serialize};

use crate::batch::collate;
use crate::error::{Error, Result};
use crate::layers::{softmax_rows, Network};
use crate::spec::ModelSpec;
use crate::tape::Matrix;
use crate::tree::{DecisionTree, RandomForest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    Neural(Network),
    Tree(DecisionTree),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub classifier: Classifier,
    pub normalization: NormalizationStats,
    pub seed: u64,
    pub task: Task,
    pub countries: CountryList,
    pub mode: Mode,
    pub label_policy: LabelPolicy,
}

/// Which test nodes are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// Every labeled node flagged for the split, once per building; GNN
    /// probabilities are averaged over the subgraphs containing it.
    Flagged,
    /// Subgraph centers only.
    Centers,
}

impl fmt::Display for EvalScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalScope::Flagged => "flagged",
            EvalScope::Centers => "centers",
        })
    }
}

impl FromStr for EvalScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flagged" | "all" => Ok(EvalScope::Flagged),
            "centers" | "center" => Ok(EvalScope::Centers),
            _ => Err(Error::config(format!("unknown evaluation scope '{s}'"))),
        }
    }
}

/// Per-node predictions on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub pred: Vec<usize>,
    pub truth: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    pub country: Vec<String>,
    pub degurba: Vec<String>,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn country_of(v: &NodeFeatureVector, countries: &CountryList) -> String {
    let oh = v.country_onehot();
    match oh.iter().position(|&x| x > 0.5) {
        Some(i) => countries.codes()[i].clone(),
        None => "unknown".to_string(),
    }
}

pub(crate) fn degurba_of(v: &NodeFeatureVector) -> String {
    match v.degurba_onehot().iter().position(|&x| x > 0.5) {
        Some(i) => Degurba::ALL[i].name().to_string(),
        None => "unknown".to_string(),
    }
}

/// Target nodes of `sg` under `scope`.
pub fn scope_targets(sg: &LocalizedSubgraph, split: Split, scope: EvalScope) -> Vec<usize> {
    match scope {
        EvalScope::Flagged => sg.flagged_nodes(split, LabelPolicy::All),
        EvalScope::Centers => sg.flagged_nodes(split, LabelPolicy::Center),
    }
}

/// Normalized feature rows of distinct labeled nodes flagged for `split`
/// (restricted to centers under the center-only policy), first occurrence
/// wins.
pub fn flat_rows(dataset: &GraphDataset, split: Split, policy: LabelPolicy) -> (Matrix, Vec<usize>, Vec<String>) {
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for sg in dataset.subgraphs_in(split) {
        for i in sg.flagged_nodes(split, policy) {
            if seen.insert(sg.node_ids[i].as_str()) {
                let mut r = sg.features[i].0;
                dataset.normalization.apply_row(&mut r);
                rows.extend_from_slice(&r);
                labels.push(sg.labels[i].expect("flagged nodes are labeled"));
                ids.push(sg.node_ids[i].clone());
            }
        }
    }
    let n = labels.len();
    (Matrix::from_shape_vec((n, NUM_NODE_FEATURES), rows).expect("row width"), labels, ids)
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.task.num_classes()
    }

    /// Fails unless `dataset` uses this model's label space and feature layout.
    pub fn check_dataset(&self, dataset: &GraphDataset) -> Result<()> {
        if dataset.manifest.task != self.task {
            return Err(Error::Core(bldclass::Error::Data(format!(
                "model predicts {} labels but the dataset holds {} labels",
                self.task, dataset.manifest.task
            ))));
        }
        if dataset.manifest.countries != self.countries {
            return Err(Error::Core(bldclass::Error::Data(
                "dataset country indicators differ from the model's".into(),
            )));
        }
        Ok(())
    }

    /// Class probabilities for the given target nodes, returned as
    /// ((subgraph position, local node), probabilities). Trees return
    /// vote shares.
    pub fn predict_targets(
        &self,
        subgraphs: &[&LocalizedSubgraph],
        targets: &[Vec<usize>],
    ) -> Result<Vec<((usize, usize), Vec<f64>)>> {
        let mut out = Vec::new();
        match &self.classifier {
            Classifier::Neural(net) => {
                let layers = net.gnn.len();
                let chunk = self.spec.batch_size.max(1);
                for start in (0..subgraphs.len()).step_by(chunk) {
                    let end = (start + chunk).min(subgraphs.len());
                    if targets[start..end].iter().all(|t| t.is_empty()) {
                        continue;
                    }
                    let batch = collate(&subgraphs[start..end], &targets[start..end], layers, self.spec.xi, &self.normalization)?;
                    let probs = softmax_rows(&net.logits(&batch.x, &batch.blocks)?);
                    for (r, &(g, i)) in batch.targets.iter().enumerate() {
                        out.push(((start + g, i), probs.row(r).to_vec()));
                    }
                }
            }
            Classifier::Tree(_) | Classifier::Forest(_) => {
                for (g, (sg, tg)) in subgraphs.iter().zip(targets).enumerate() {
                    let mut tg = tg.clone();
                    tg.sort_unstable();
                    tg.dedup();
                    for i in tg {
                        let mut row = sg.features[i].0;
                        self.normalization.apply_row(&mut row);
                        out.push(((g, i), self.vote_shares(&row)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn vote_shares(&self, row: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes()];
        match &self.classifier {
            Classifier::Tree(t) => p[t.predict_row(row)] = 1.0,
            Classifier::Forest(f) => {
                for t in &f.trees {
                    p[t.predict_row(row)] += 1.0 / f.trees.len() as f64;
                }
            }
            Classifier::Neural(_) => unreachable!("trees only"),
        }
        p
    }

    fn decide(&self, p: &[f64], row: &[f64]) -> usize {
        match &self.classifier {
            Classifier::Forest(f) => f.predict_row(row),
            _ => argmax(p),
        }
    }

    /// Predictions for the nodes of `split` selected by `scope`.
    pub fn predict_split(&self, dataset: &GraphDataset, split: Split, scope: EvalScope) -> Result<Predictions> {
        self.check_dataset(dataset)?;
        let subgraphs: Vec<&LocalizedSubgraph> = dataset.subgraphs_in(split).collect();
        self.predict_subgraphs(&subgraphs, &dataset.manifest.countries, split, scope)
    }

    pub fn predict_subgraphs(
        &self,
        subgraphs: &[&LocalizedSubgraph],
        countries: &CountryList,
        split: Split,
        scope: EvalScope,
    ) -> Result<Predictions> {
        let mut targets: Vec<Vec<usize>> = subgraphs.iter().map(|sg| scope_targets(sg, split, scope)).collect();
        let tree_like = !matches!(self.classifier, Classifier::Neural(_));
        if tree_like && scope == EvalScope::Flagged {
            let mut seen = HashSet::new();
            for (sg, tg) in subgraphs.iter().zip(targets.iter_mut()) {
                tg.retain(|&i| seen.insert(sg.node_ids[i].clone()));
            }
        }
        let scored = self.predict_targets(subgraphs, &targets)?;
        let k = self.n_classes();
        let mut preds = Predictions {
            ids: Vec::new(),
            pred: Vec::new(),
            truth: Vec::new(),
            probs: Vec::new(),
            country: Vec::new(),
            degurba: Vec::new(),
        };
        let push = |preds: &mut Predictions, sg: &LocalizedSubgraph, i: usize, p: Vec<f64>, row: &[f64]| {
            preds.ids.push(sg.node_ids[i].clone());
            preds.pred.push(self.decide(&p, row));
            preds.truth.push(sg.labels[i].expect("targets are labeled"));
            preds.country.push(country_of(&sg.features[i], countries));
            preds.degurba.push(degurba_of(&sg.features[i]));
            preds.probs.push(p);
        };
        match scope {
            EvalScope::Centers => {
                for ((g, i), p) in scored {
                    let mut row = subgraphs[g].features[i].0;
                    self.normalization.apply_row(&mut row);
                    push(&mut preds, subgraphs[g], i, p, &row);
                }
            }
            EvalScope::Flagged => {
                let mut acc: BTreeMap<&str, (Vec<f64>, usize, usize, usize)> = BTreeMap::new();
                for ((g, i), p) in scored {
                    let e = acc.entry(subgraphs[g].node_ids[i].as_str()).or_insert((vec![0.0; k], 0, g, i));
                    e.0.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                    e.1 += 1;
                }
                for (_, (sum, n, g, i)) in acc {
                    let p: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
                    let mut row = subgraphs[g].features[i].0;
                    self.normalization.apply_row(&mut row);
                    push(&mut preds, subgraphs[g], i, p, &row);
                }
            }
        }
        if preds.ids.is_empty() {
            return Err(Error::invalid_state(format!("no labeled {split} nodes to score")));
        }
        Ok(preds)
    }

    pub fn report(&self, preds: &Predictions) -> Result<EvalReport> {
        let names = self.task.class_names();
        Ok(EvalReport::compute(&preds.pred, &preds.truth, &names, &preds.country, &preds.degurba)?)
    }

    /// Metrics on the test split.
    pub fn evaluate(&self, dataset: &GraphDataset, scope: EvalScope) -> Result<EvalReport> {
        let preds = self.predict_split(dataset, Split::Test, scope)?;
        self.report(&preds)
    }
}
