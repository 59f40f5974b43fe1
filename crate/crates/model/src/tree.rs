//! CART decision trees with Gini impurity and bagged random forests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { class: usize, counts: Vec<usize> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Candidate features per split; `None` considers all in column order.
    pub max_features: Option<usize>,
}

/// Best threshold split of `rows` over the candidate features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    pub impurity: f64,
}

pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn class_counts(y: &[usize], rows: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &r in rows {
        c[y[r]] += 1;
    }
    c
}

/// Majority class; ties go to the lowest class id.
pub fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Best split of `rows` on one feature, or `None` when the feature is
/// constant over them.
fn best_on_feature(x: &Matrix, y: &[usize], rows: &[usize], k: usize, f: usize) -> Option<(f64, f64)> {
    let mut vals: Vec<(f64, usize)> = rows.iter().map(|&r| (x[[r, f]], y[r])).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = vals.len();
    if n < 2 || vals[0].0 == vals[n - 1].0 {
        return None;
    }
    let mut right = vec![0usize; k];
    for &(_, l) in &vals {
        right[l] += 1;
    }
    let mut left = vec![0usize; k];
    let (mut sq_l, mut sq_r) = (0.0f64, right.iter().map(|&c| (c * c) as f64).sum::<f64>());
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        let l = vals[i].1;
        sq_l += (2 * left[l] + 1) as f64;
        sq_r -= (2 * right[l] - 1) as f64;
        left[l] += 1;
        right[l] -= 1;
        if vals[i].0 == vals[i + 1].0 {
            continue;
        }
        let (nl, nr) = ((i + 1) as f64, (n - i - 1) as f64);
        let imp = (nl - sq_l / nl + nr - sq_r / nr) / n as f64;
        if best.map_or(true, |(b, _)| imp < b) {
            let (a, b) = (vals[i].0, vals[i + 1].0);
            let mut t = a + (b - a) / 2.0;
            if t >= b {
                t = a;
            }
            best = Some((imp, t));
        }
    }
    best
}

/// Exhaustive search over `features` (in order; ties keep the earlier
/// candidate).
pub fn best_split(x: &Matrix, y: &[usize], rows: &[usize], k: usize, features: &[usize]) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        if let Some((imp, t)) = best_on_feature(x, y, rows, k, f) {
            if best.map_or(true, |b| imp < b.impurity) {
                best = Some(SplitChoice { feature: f, threshold: t, impurity: imp });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub n_classes: usize,
    /// Impurity decrease per feature, normalized to sum 1 (all zero for a
    /// single leaf).
    pub importance: Vec<f64>,
}

struct Builder<'a, R: Rng> {
    x: &'a Matrix,
    y: &'a [usize],
    k: usize,
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

impl<R: Rng> Builder<'_, R> {
    fn candidates(&mut self, rows: &[usize]) -> Option<SplitChoice> {
        let nf = self.x.ncols();
        match self.params.max_features {
            None => best_split(self.x, self.y, rows, self.k, &(0..nf).collect::<Vec<_>>()),
            Some(m) if m >= nf => best_split(self.x, self.y, rows, self.k, &(0..nf).collect::<Vec<_>>()),
            Some(m) => {
                let mut order: Vec<usize> = (0..nf).collect();
                order.shuffle(self.rng);
                let mut best: Option<SplitChoice> = None;
                let mut visited = 0;
                for f in order {
                    if visited >= m && best.is_some() {
                        break;
                    }
                    if let Some(s) = best_split(self.x, self.y, rows, self.k, &[f]) {
                        visited += 1;
                        if best.map_or(true, |b| s.impurity < b.impurity) {
                            best = Some(s);
                        }
                    }
                }
                best
            }
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = class_counts(self.y, &rows, self.k);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { class: majority(&counts), counts: counts.clone() });
        let g = gini(&counts);
        if depth >= self.params.max_depth || rows.len() < 2 || g <= 0.0 {
            return id;
        }
        let Some(s) = self.candidates(&rows) else { return id };
        let n = rows.len() as f64;
        self.importance[s.feature] += n * (g - s.impurity);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| self.x[[r, s.feature]] <= s.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature: s.feature, threshold: s.threshold, left, right };
        id
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

fn check_training_data(x: &Matrix, y: &[usize], k: usize) -> Result<()> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::invalid_input(format!("{} feature rows for {} labels", x.nrows(), y.len())));
    }
    if let Some(l) = y.iter().find(|&&l| l >= k) {
        return Err(Error::invalid_input(format!("label {l} outside {k} classes")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_input("non-finite feature value".to_string()));
    }
    Ok(())
}

impl DecisionTree {
    pub fn fit(x: &Matrix, y: &[usize], k: usize, params: TreeParams, rng: &mut impl Rng) -> Result<DecisionTree> {
        check_training_data(x, y, k)?;
        Ok(DecisionTree::fit_rows(x, y, k, params, (0..y.len()).collect(), rng))
    }

    /// Fits on the listed rows (repeats allowed).
    fn fit_rows(x: &Matrix, y: &[usize], k: usize, params: TreeParams, rows: Vec<usize>, rng: &mut impl Rng) -> DecisionTree {
        let mut b =
            Builder { x, y, k, params, rng, nodes: Vec::new(), importance: vec![0.0; x.ncols()] };
        b.grow(rows, 0);
        DecisionTree { nodes: b.nodes, n_features: x.ncols(), n_classes: k, importance: normalized(b.importance) }
    }

    fn leaf(&self, row: &[f64]) -> &TreeNode {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        match self.leaf(row) {
            TreeNode::Leaf { class, .. } => *class,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        x.rows().into_iter().map(|r| self.predict_row(r.as_slice().expect("contiguous row"))).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
    /// Mean of the per-tree importances, normalized to sum 1.
    pub importance: Vec<f64>,
}

impl RandomForest {
    pub fn fit(x: &Matrix, y: &[usize], k: usize, params: ForestParams, seed: u64) -> Result<RandomForest> {
        check_training_data(x, y, k)?;
        if params.n_trees == 0 {
            return Err(Error::config("a forest needs at least one tree"));
        }
        let n = y.len();
        let trees: Vec<DecisionTree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows = if params.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
                DecisionTree::fit_rows(x, y, k, params.tree, rows, &mut rng)
            })
            .collect();
        let mut imp = vec![0.0; x.ncols()];
        for t in &trees {
            imp.iter_mut().zip(&t.importance).for_each(|(a, b)| *a += b);
        }
        Ok(RandomForest { trees, n_classes: k, importance: normalized(imp) })
    }

    /// Majority vote of the trees; ties go to the lowest class id.
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(row)] += 1;
        }
        majority(&votes)
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        x.rows().into_iter().map(|r| self.predict_row(r.as_slice().expect("contiguous row"))).collect()
    }
}
