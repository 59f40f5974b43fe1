//! Repeated training over data splits and seeds.

use bldclass::eval::{AggregateReport, EvalReport};
use bldclass::graphgen::{with_workers, GraphDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EvalScope;
use crate::spec::ModelSpec;
use crate::train::{train, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRun {
    pub split: usize,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub training: Option<TrainReport>,
    /// Why the run was excluded.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub runs: Vec<CvRun>,
    pub aggregate: AggregateReport,
}

/// Split `s` redraws the subgraph split with `dataset seed + s` (split 0
/// reproduces the stored split when the dataset was generated with its
/// manifest seed); run `r` of a split trains with `base_seed + r`.
/// Diverged runs are excluded from the aggregate and listed in it.
pub fn cross_validate(
    dataset: &GraphDataset,
    spec: &ModelSpec,
    n_splits: usize,
    n_seeds: usize,
    base_seed: u64,
    scope: EvalScope,
    workers: usize,
) -> Result<CvResult> {
    if n_splits == 0 || n_seeds == 0 {
        return Err(Error::config("cross validation needs at least one split and one seed"));
    }
    spec.validate()?;
    let splits: Vec<GraphDataset> = (0..n_splits)
        .map(|s| dataset.resplit(dataset.manifest.seed.wrapping_add(s as u64)))
        .collect::<std::result::Result<_, _>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..n_splits).flat_map(|s| (0..n_seeds).map(move |r| (s, base_seed.wrapping_add(r as u64)))).collect();
    let outcomes: Vec<Result<(EvalReport, TrainReport)>> = with_workers(workers, || {
        jobs.par_iter()
            .map(|&(s, seed)| {
                let (model, tr) = train(&splits[s], spec, seed)?;
                Ok((model.evaluate(&splits[s], scope)?, tr))
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(jobs.len());
    let mut excluded = Vec::new();
    for ((split, seed), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok((report, training)) => runs.push(CvRun { split, seed, report: Some(report), training: Some(training), error: None }),
            Err(e) if e.is_divergence() => {
                let msg = format!("split {split}, seed {seed}: {e}");
                excluded.push(msg.clone());
                runs.push(CvRun { split, seed, report: None, training: None, error: Some(msg) });
            }
            Err(e) => return Err(e),
        }
    }
    let reports: Vec<EvalReport> = runs.iter().filter_map(|r| r.report.clone()).collect();
    let aggregate = AggregateReport::of(&reports, excluded);
    Ok(CvResult { runs, aggregate })
}
