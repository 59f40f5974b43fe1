//! Mini-batch training with early stopping on the validation loss.

use std::sync::Arc;

use bldclass::feature::NUM_NODE_FEATURES;
use bldclass::graphgen::{sample_neighbors, GraphDataset, LocalizedSubgraph, Mode, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{collate, Batch};
use crate::error::{Error, Result};
use crate::layers::{Block, Dropout, Network};
use crate::model::{flat_rows, Classifier, TrainedModel};
use crate::optim::Adam;
use crate::spec::{Architecture, ModelSpec};
use crate::tape::{Matrix, Tape};
use crate::tree::{DecisionTree, ForestParams, RandomForest, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub architecture: Architecture,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Loss terms (labeled nodes) per training epoch.
    pub loss_terms: Vec<usize>,
    /// Last epoch run (1-based; 0 for trees).
    pub stopped_epoch: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub early_stopped: bool,
}

/// One finished epoch, passed to progress callbacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub loss_terms: usize,
}

pub fn train(dataset: &GraphDataset, spec: &ModelSpec, seed: u64) -> Result<(TrainedModel, TrainReport)> {
    train_with_progress(dataset, spec, seed, &mut |_| {})
}

fn wrap(dataset: &GraphDataset, spec: &ModelSpec, seed: u64, classifier: Classifier) -> TrainedModel {
    TrainedModel {
        spec: spec.clone(),
        classifier,
        normalization: dataset.normalization.clone(),
        seed,
        task: dataset.manifest.task,
        countries: dataset.manifest.countries.clone(),
        mode: dataset.manifest.mode,
        label_policy: dataset.manifest.label_policy,
    }
}

pub fn train_with_progress(
    dataset: &GraphDataset,
    spec: &ModelSpec,
    seed: u64,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(TrainedModel, TrainReport)> {
    spec.validate()?;
    let k = dataset.num_classes();
    let policy = dataset.manifest.label_policy;
    let arch = spec.architecture;
    if !arch.is_neural() {
        let (x, y, _) = flat_rows(dataset, Split::Train, policy);
        if y.is_empty() {
            return Err(Error::invalid_state("no labeled training nodes"));
        }
        let tree = TreeParams { max_depth: spec.max_depth, max_features: spec.max_features };
        let classifier = if arch == Architecture::Tree {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Classifier::Tree(DecisionTree::fit(&x, &y, k, tree, &mut rng)?)
        } else {
            let params = ForestParams { n_trees: spec.n_trees, tree, bootstrap: spec.bootstrap };
            Classifier::Forest(RandomForest::fit(&x, &y, k, params, seed)?)
        };
        let report = TrainReport {
            architecture: arch,
            seed,
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            loss_terms: vec![y.len()],
            stopped_epoch: 0,
            best_epoch: 0,
            early_stopped: false,
        };
        return Ok((wrap(dataset, spec, seed, classifier), report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(spec, NUM_NODE_FEATURES, k, &mut rng)?;
    let mut adam = Adam::new(spec.lr, spec.beta1, spec.beta2, spec.eps, spec.weight_decay, &net.params.shapes());
    let source = BatchSource::new(dataset, spec)?;
    let val_batches = source.val_batches()?;

    let mut report = TrainReport {
        architecture: arch,
        seed,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        loss_terms: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        early_stopped: false,
    };
    let mut best = (f64::INFINITY, net.params.values.clone());
    let mut stale = 0;
    for epoch in 1..=spec.max_epochs {
        let batches = source.train_batches(&mut rng)?;
        let (mut sum, mut terms) = (0.0, 0usize);
        for batch in batches {
            let (rows, labels) = batch.labeled();
            if rows.is_empty() {
                continue;
            }
            let mut t = Tape::new();
            let pv = net.params.register(&mut t);
            let x = t.constant(batch.x);
            let logits = net.forward(&mut t, &pv, x, &batch.blocks, &mut Dropout::train(&mut rng));
            let n = rows.len();
            let loss = t.cross_entropy(logits, Arc::from(rows), Arc::from(labels));
            let lv = t.value(loss)[[0, 0]];
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch: Some(epoch), message: format!("training loss is {lv}") });
            }
            let grads = t.backward(loss).params(&net.params.shapes());
            adam.step(&mut net.params.values, &grads).map_err(|e| match e {
                Error::Divergence { message, .. } => Error::Divergence { epoch: Some(epoch), message },
                other => other,
            })?;
            sum += lv * n as f64;
            terms += n;
        }
        if terms == 0 {
            return Err(Error::invalid_state("no labeled training nodes"));
        }
        let val = mean_loss(&net, &val_batches)?;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch: Some(epoch), message: format!("validation loss is {val}") });
        }
        let train_loss = sum / terms as f64;
        report.train_loss.push(train_loss);
        report.val_loss.push(val);
        report.loss_terms.push(terms);
        report.stopped_epoch = epoch;
        progress(&EpochRecord { epoch, train_loss, val_loss: val, loss_terms: terms });
        if val < best.0 {
            best = (val, net.params.values.clone());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= spec.patience {
                report.early_stopped = true;
                break;
            }
        }
    }
    net.params.values = best.1;
    Ok((wrap(dataset, spec, seed, Classifier::Neural(net)), report))
}

/// Mean cross-entropy over the labeled output rows of `batches` in eval mode.
pub fn mean_loss(net: &Network, batches: &[Batch]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for b in batches {
        let (rows, labels) = b.labeled();
        if rows.is_empty() {
            continue;
        }
        let z = net.logits(&b.x, &b.blocks)?;
        for (&r, &y) in rows.iter().zip(&labels) {
            let row = z.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            sum += m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[y];
        }
        n += rows.len();
    }
    if n == 0 {
        return Err(Error::invalid_state("no labeled validation nodes"));
    }
    Ok(sum / n as f64)
}

/// Produces training and validation batches for one dataset and spec.
struct BatchSource<'a> {
    dataset: &'a GraphDataset,
    spec: &'a ModelSpec,
    layers: usize,
    /// Training subgraphs with at least one loss term.
    train: Vec<&'a LocalizedSubgraph>,
    /// Flattened rows for the MLP.
    rows: Option<(Matrix, Vec<usize>)>,
}

impl<'a> BatchSource<'a> {
    fn new(dataset: &'a GraphDataset, spec: &'a ModelSpec) -> Result<BatchSource<'a>> {
        let policy = dataset.manifest.label_policy;
        let layers = if spec.architecture.is_gnn() { spec.gnn_layers } else { 0 };
        let train: Vec<&LocalizedSubgraph> = dataset
            .subgraphs_in(Split::Train)
            .filter(|sg| !sg.flagged_nodes(Split::Train, policy).is_empty())
            .collect();
        if train.is_empty() {
            return Err(Error::invalid_state("no labeled training nodes"));
        }
        let rows = (layers == 0).then(|| {
            let (x, y, _) = flat_rows(dataset, Split::Train, policy);
            (x, y)
        });
        Ok(BatchSource { dataset, spec, layers, train, rows })
    }

    fn sampling(&self) -> Option<&'a [usize]> {
        if self.dataset.manifest.mode == Mode::Distance && self.layers > 0 {
            self.spec.fanouts.as_deref()
        } else {
            None
        }
    }

    fn train_batches(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Batch>> {
        let bs = self.spec.batch_size;
        if let Some((x, y)) = &self.rows {
            let mut order: Vec<usize> = (0..y.len()).collect();
            order.shuffle(rng);
            return Ok(order
                .chunks(bs)
                .map(|c| Batch {
                    x: x.select(ndarray::Axis(0), c),
                    blocks: Vec::<Block>::new(),
                    targets: c.iter().map(|&r| (r, 0)).collect(),
                    labels: c.iter().map(|&r| Some(y[r])).collect(),
                })
                .collect());
        }
        let policy = self.dataset.manifest.label_policy;
        let mut order = self.train.clone();
        order.shuffle(rng);
        let mut out = Vec::with_capacity(order.len().div_ceil(bs));
        for chunk in order.chunks(bs) {
            let owned: Vec<LocalizedSubgraph>;
            let subgraphs: Vec<&LocalizedSubgraph> = match self.sampling() {
                Some(f) => {
                    owned = chunk.iter().map(|sg| sample_neighbors(sg, f, rng)).collect();
                    owned.iter().collect()
                }
                None => chunk.to_vec(),
            };
            let targets: Vec<Vec<usize>> = subgraphs.iter().map(|sg| sg.flagged_nodes(Split::Train, policy)).collect();
            out.push(collate(&subgraphs, &targets, self.layers, self.spec.xi, &self.dataset.normalization)?);
        }
        Ok(out)
    }

    fn val_batches(&self) -> Result<Vec<Batch>> {
        let policy = self.dataset.manifest.label_policy;
        let bs = self.spec.batch_size;
        if self.layers == 0 {
            let (x, y, _) = flat_rows(self.dataset, Split::Val, policy);
            if y.is_empty() {
                return Err(Error::invalid_state("no labeled validation nodes"));
            }
            let idx: Vec<usize> = (0..y.len()).collect();
            return Ok(idx
                .chunks(bs)
                .map(|c| Batch {
                    x: x.select(ndarray::Axis(0), c),
                    blocks: Vec::new(),
                    targets: c.iter().map(|&r| (r, 0)).collect(),
                    labels: c.iter().map(|&r| Some(y[r])).collect(),
                })
                .collect());
        }
        let val: Vec<&LocalizedSubgraph> = self
            .dataset
            .subgraphs_in(Split::Val)
            .filter(|sg| !sg.flagged_nodes(Split::Val, policy).is_empty())
            .collect();
        if val.is_empty() {
            return Err(Error::invalid_state("no labeled validation nodes"));
        }
        val.chunks(bs)
            .map(|c| {
                let targets: Vec<Vec<usize>> = c.iter().map(|sg| sg.flagged_nodes(Split::Val, policy)).collect();
                collate(c, &targets, self.layers, self.spec.xi, &self.dataset.normalization)
            })
            .collect()
    }
}
