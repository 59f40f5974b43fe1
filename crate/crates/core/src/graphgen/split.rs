use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LocalizedSubgraph, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<SplitRatios> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be non-negative and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Subgraph counts per split; rounding remainder goes to test.
    fn counts(&self, n: usize) -> (usize, usize) {
        let train = (self.train * n as f64).round() as usize;
        let val = ((self.val * n as f64).round() as usize).min(n - train.min(n));
        (train.min(n), val)
    }
}

/// Randomly partitions subgraphs into train/val/test and sets node flags.
///
/// A labeled non-center node keeps its subgraph's split unless it also
/// occurs in a subgraph of an earlier split (train before val before
/// test), in which case it is unflagged. Centers always keep their
/// subgraph's split.
pub fn assign_splits(mut subgraphs: Vec<LocalizedSubgraph>, ratios: SplitRatios, seed: u64) -> Result<Vec<LocalizedSubgraph>> {
    ratios.validate()?;
    if let Some(sg) = subgraphs.iter().find(|s| s.labels[s.center].is_none()) {
        return Err(Error::InvalidInput(format!("subgraph center {} has no label", sg.center_id())));
    }
    let n = subgraphs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5917));
    let (n_train, n_val) = ratios.counts(n);
    for (rank, &k) in order.iter().enumerate() {
        subgraphs[k].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }

    let ids_in = |split: Split, sgs: &[LocalizedSubgraph]| -> HashSet<String> {
        sgs.iter()
            .filter(|s| s.split == Some(split))
            .flat_map(|s| s.node_ids.iter().cloned())
            .collect()
    };
    let train_ids = ids_in(Split::Train, &subgraphs);
    let val_ids = ids_in(Split::Val, &subgraphs);

    for sg in &mut subgraphs {
        let split = sg.split.expect("assigned above");
        for i in 0..sg.len() {
            sg.flags[i] = if sg.labels[i].is_none() {
                None
            } else if i == sg.center {
                Some(split)
            } else {
                let id = &sg.node_ids[i];
                let masked = match split {
                    Split::Train => false,
                    Split::Val => train_ids.contains(id),
                    Split::Test => train_ids.contains(id) || val_ids.contains(id),
                };
                (!masked).then_some(split)
            };
        }
    }
    Ok(subgraphs)
}
