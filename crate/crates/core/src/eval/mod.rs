//! Classification metrics: overall accuracy, Cohen's kappa, per-class F1,
//! group breakdowns and run aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Groups with fewer test nodes than this are flagged in breakdowns.
pub const LOW_SUPPORT: usize = 50;

fn check(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "prediction and truth lengths differ ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no labels to evaluate".into()));
    }
    Ok(())
}

pub fn overall_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check(pred, truth)?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    check(pred, truth)?;
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::InvalidInput(format!("label {} outside 0..{k}", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Chance-corrected agreement `(OA - p_e) / (1 - p_e)` with
/// `p_e = Σ n̂_k n_k / n²`.
pub fn cohens_kappa(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check(pred, truth)?;
    let k = pred.iter().chain(truth).max().copied().unwrap_or(0) + 1;
    let (mut np, mut nt) = (vec![0u64; k], vec![0u64; k]);
    let mut correct = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        np[p] += 1;
        nt[t] += 1;
        correct += u64::from(p == t);
    }
    let n = pred.len() as u64;
    let agree: u128 = np.iter().zip(&nt).map(|(&a, &b)| a as u128 * b as u128).sum();
    let total = n as u128 * n as u128;
    if agree == total {
        return Err(Error::Undefined("kappa undefined: expected agreement is 1".into()));
    }
    let pe = agree as f64 / total as f64;
    let oa = correct as f64 / n as f64;
    Ok((oa - pe) / (1.0 - pe))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    /// No prediction of this class; precision set to 0.
    pub precision_undefined: bool,
    pub recall: Option<f64>,
    /// `None` when the class is absent from the truth.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScores>,
    /// Unweighted mean over classes present in the truth.
    pub macro_f1: f64,
    pub f1_min: f64,
    pub f1_max: f64,
}

pub fn f1_scores(pred: &[usize], truth: &[usize], k: usize) -> Result<F1Report> {
    if k < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    let m = confusion_matrix(pred, truth, k)?;
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = m[c][c];
            let support: u64 = m[c].iter().sum();
            let predicted: u64 = (0..k).map(|r| m[r][c]).sum();
            let precision_undefined = predicted == 0;
            let precision = if precision_undefined { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = (support > 0).then(|| tp as f64 / support as f64);
            let f1 = recall.map(|r| if precision + r > 0.0 { 2.0 * precision * r / (precision + r) } else { 0.0 });
            ClassScores { support, predicted, precision, precision_undefined, recall, f1 }
        })
        .collect();
    let present: Vec<f64> = per_class.iter().filter_map(|c| c.f1).collect();
    let macro_f1 = present.iter().sum::<f64>() / present.len() as f64;
    let f1_min = present.iter().copied().fold(f64::INFINITY, f64::min);
    let f1_max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(F1Report { per_class, macro_f1, f1_min, f1_max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: String,
    pub n: usize,
    pub oa: f64,
    pub low_support: bool,
}

/// Overall accuracy per group, groups in lexicographic order.
pub fn breakdown(pred: &[usize], truth: &[usize], groups: &[String]) -> Result<Vec<GroupAccuracy>> {
    check(pred, truth)?;
    if groups.len() != pred.len() {
        return Err(Error::InvalidInput("one group key per label required".into()));
    }
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ((p, t), g) in pred.iter().zip(truth).zip(groups) {
        let e = tally.entry(g.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(p == t);
    }
    Ok(tally
        .into_iter()
        .map(|(g, (n, ok))| GroupAccuracy {
            group: g.to_string(),
            n,
            oa: ok as f64 / n as f64,
            low_support: n < LOW_SUPPORT,
        })
        .collect())
}

/// Metrics of one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub n_test: usize,
    pub oa: f64,
    /// `None` when undefined (expected agreement 1).
    pub kappa: Option<f64>,
    pub f1: F1Report,
    pub confusion: Vec<Vec<u64>>,
    pub by_country: Vec<GroupAccuracy>,
    pub by_degurba: Vec<GroupAccuracy>,
}

impl EvalReport {
    pub fn compute(
        pred: &[usize],
        truth: &[usize],
        class_names: &[&str],
        countries: &[String],
        degurba: &[String],
    ) -> Result<EvalReport> {
        let k = class_names.len();
        let kappa = match cohens_kappa(pred, truth) {
            Ok(v) => Some(v),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            n_test: pred.len(),
            oa: overall_accuracy(pred, truth)?,
            kappa,
            f1: f1_scores(pred, truth, k)?,
            confusion: confusion_matrix(pred, truth, k)?,
            by_country: breakdown(pred, truth, countries)?,
            by_degurba: breakdown(pred, truth, degurba)?,
        })
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Dispersion {
    pub fn of(values: &[f64]) -> Dispersion {
        let n = values.len();
        if n == 0 {
            return Dispersion { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Dispersion { mean, std, n }
    }
}

/// Metrics aggregated over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    /// Runs excluded because training diverged, with the reason.
    pub excluded: Vec<String>,
    pub oa: Dispersion,
    pub kappa: Dispersion,
    pub macro_f1: Dispersion,
    pub f1_min: Dispersion,
    pub f1_max: Dispersion,
}

impl AggregateReport {
    pub fn of(reports: &[EvalReport], excluded: Vec<String>) -> AggregateReport {
        let col = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Dispersion {
            Dispersion::of(&reports.iter().filter_map(f).collect::<Vec<_>>())
        };
        AggregateReport {
            runs: reports.len(),
            excluded,
            oa: col(&|r| Some(r.oa)),
            kappa: col(&|r| r.kappa),
            macro_f1: col(&|r| Some(r.f1.macro_f1)),
            f1_min: col(&|r| Some(r.f1.f1_min)),
            f1_max: col(&|r| Some(r.f1.f1_max)),
        }
    }
}
