//! Dense and graph layers evaluated on message-passing blocks, and the
//! networks assembled from them.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spec::{Architecture, ModelSpec};
use crate::tape::{EdgeList, Matrix, Tape, Var};

/// Edges feeding one GNN layer. Layer inputs are the `n_src` source rows;
/// the first `n_dst` of them are also the destinations.
#[derive(Debug, Clone)]
pub struct Block {
    n_src: usize,
    n_dst: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    weight: Vec<f64>,
    degree: Vec<f64>,
    loops: EdgeList,
    prefix: Arc<[usize]>,
}

impl Block {
    /// `src`/`dst` are directed neighbour edges (no self loops) with scaled
    /// edge features `weight`; `degree` is the weighted degree of every
    /// source node counting its self loop.
    pub fn new(
        n_src: usize,
        n_dst: usize,
        src: Vec<usize>,
        dst: Vec<usize>,
        weight: Vec<f64>,
        degree: Vec<f64>,
    ) -> Result<Block> {
        if n_dst > n_src {
            return Err(Error::Shape(format!("{n_dst} destinations but only {n_src} sources")));
        }
        if src.len() != dst.len() || src.len() != weight.len() || degree.len() != n_src {
            return Err(Error::Shape("edge arrays or degree vector have inconsistent lengths".into()));
        }
        if src.iter().any(|&s| s >= n_src) || dst.iter().any(|&d| d >= n_dst) {
            return Err(Error::Shape("edge endpoint out of range".into()));
        }
        if let Some(w) = weight.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid_input(format!("edge weights must be finite and non-negative, got {w}")));
        }
        if let Some(d) = degree.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::invalid_input(format!("node degrees must be positive, got {d}")));
        }
        let prefix: Arc<[usize]> = (0..n_dst).collect();
        let loop_src: Arc<[usize]> = src.iter().copied().chain(0..n_dst).collect();
        let loop_dst: Arc<[usize]> = dst.iter().copied().chain(0..n_dst).collect();
        let loop_weight: Arc<[f64]> = weight.iter().copied().chain(std::iter::repeat(1.0).take(n_dst)).collect();
        let loops = EdgeList::new(loop_src, loop_dst, loop_weight);
        Ok(Block {
            n_src,
            n_dst,
            src: src.into(),
            dst: dst.into(),
            weight,
            degree,
            loops,
            prefix,
        })
    }

    /// Block over a whole graph given as undirected weighted edges; every
    /// node is both source and destination.
    pub fn full(n: usize, edges: &[(usize, usize, f64)]) -> Result<Block> {
        let mut src = Vec::with_capacity(2 * edges.len());
        let mut dst = Vec::with_capacity(2 * edges.len());
        let mut weight = Vec::with_capacity(2 * edges.len());
        let mut degree = vec![1.0; n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Shape(format!("edge ({i}, {j}) outside a graph of {n} nodes")));
            }
            src.extend([i, j]);
            dst.extend([j, i]);
            weight.extend([w, w]);
            degree[i] += w;
            degree[j] += w;
        }
        Block::new(n, n, src, dst, weight, degree)
    }

    pub fn n_src(&self) -> usize {
        self.n_src
    }

    pub fn n_dst(&self) -> usize {
        self.n_dst
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.src.iter().zip(self.dst.iter()).zip(&self.weight).map(|((&s, &d), &w)| (s, d, w))
    }

    /// Destination of every edge seen by attention layers (neighbour edges
    /// followed by one self loop per destination).
    pub fn attention_targets(&self) -> &[usize] {
        &self.loops.dst
    }

    /// Source of every attention edge, aligned with [`Block::attention_targets`].
    pub fn attention_sources(&self) -> &[usize] {
        &self.loops.src
    }
}

/// Trainable tensors of a network, addressed by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl Params {
    /// Adds a `rows×cols` tensor drawn uniformly from `±bound`.
    pub fn add(&mut self, name: String, rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> usize {
        let m = if bound > 0.0 {
            Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        } else {
            Matrix::zeros((rows, cols))
        };
        self.names.push(name);
        self.values.push(m);
        self.values.len() - 1
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(|m| m.dim()).collect()
    }

    /// Records every tensor on `tape`; the result is indexed by id.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().enumerate().map(|(i, m)| tape.param(i, m)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

fn fan_in(n: usize) -> f64 {
    1.0 / (n.max(1) as f64).sqrt()
}

/// Dropout state of one forward pass: active with a generator, identity
/// without one.
pub struct Dropout<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn train(rng: &'a mut ChaCha8Rng) -> Dropout<'a> {
        Dropout { rng: Some(rng) }
    }

    pub fn eval() -> Dropout<'static> {
        Dropout { rng: None }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, t: &mut Tape, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_shape_fn(t.shape(x), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        t.mask(x, mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(p: &mut Params, name: &str, fin: usize, fout: usize, rng: &mut impl Rng) -> Linear {
        let w = p.add(format!("{name}.weight"), fin, fout, fan_in(fin), rng);
        let b = p.add(format!("{name}.bias"), 1, fout, 0.0, rng);
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, pv: &[Var], x: Var) -> Var {
        let y = t.matmul(x, pv[self.w]);
        t.add_row(y, pv[self.b])
    }
}

/// Symmetrically normalized convolution with edge weights and self loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub w: usize,
    pub b: usize,
}

impl GcnLayer {
    pub fn new(p: &mut Params, name: &str, fin: usize, fout: usize, rng: &mut impl Rng) -> GcnLayer {
        let w = p.add(format!("{name}.weight"), fin, fout, fan_in(fin), rng);
        let b = p.add(format!("{name}.bias"), 1, fout, 0.0, rng);
        GcnLayer { w, b }
    }

    pub fn forward(&self, t: &mut Tape, pv: &[Var], h: Var, block: &Block) -> Var {
        let hw = t.matmul(h, pv[self.w]);
        let deg = &block.degree;
        let coef: Vec<f64> = block
            .edges()
            .map(|(s, d, w)| w / (deg[s] * deg[d]).sqrt())
            .chain((0..block.n_dst).map(|i| 1.0 / deg[i]))
            .collect();
        let coef = t.constant(Matrix::from_shape_vec((coef.len(), 1), coef).expect("column"));
        let out = t.edge_aggregate(hw, coef, None, block.loops.clone(), block.n_dst);
        t.add_row(out, pv[self.b])
    }
}

/// Sample-and-aggregate convolution with elementwise max aggregation and a
/// separate root weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub w_self: usize,
    pub w_neigh: usize,
    pub b: usize,
}

impl SageLayer {
    pub fn new(p: &mut Params, name: &str, fin: usize, fout: usize, rng: &mut impl Rng) -> SageLayer {
        let w_neigh = p.add(format!("{name}.neigh_weight"), fin, fout, fan_in(fin), rng);
        let w_self = p.add(format!("{name}.root_weight"), fin, fout, fan_in(fin), rng);
        let b = p.add(format!("{name}.bias"), 1, fout, 0.0, rng);
        SageLayer { w_self, w_neigh, b }
    }

    pub fn forward(&self, t: &mut Tape, pv: &[Var], h: Var, block: &Block) -> Var {
        let nb = t.gather(h, block.src.clone());
        let agg = t.segment_max(nb, &block.dst, block.n_dst);
        let agg = t.matmul(agg, pv[self.w_neigh]);
        let root = t.gather(h, block.prefix.clone());
        let root = t.matmul(root, pv[self.w_self]);
        let out = t.add(agg, root);
        t.add_row(out, pv[self.b])
    }
}

/// Attention convolution with dynamic (post-activation) scoring and the
/// edge feature in the attention input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub w_l: usize,
    pub w_r: usize,
    pub w_e: usize,
    pub att: usize,
    pub b: usize,
    pub heads: usize,
    pub per_head: usize,
    pub concat: bool,
    pub slope: f64,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut Params,
        name: &str,
        fin: usize,
        heads: usize,
        per_head: usize,
        concat: bool,
        slope: f64,
        rng: &mut impl Rng,
    ) -> GatLayer {
        let hc = heads * per_head;
        let w_l = p.add(format!("{name}.lin_l"), fin, hc, fan_in(fin), rng);
        let w_r = p.add(format!("{name}.lin_r"), fin, hc, fan_in(fin), rng);
        let w_e = p.add(format!("{name}.lin_edge"), 1, hc, 1.0, rng);
        let att = p.add(format!("{name}.att"), 1, hc, fan_in(per_head), rng);
        let b = p.add(format!("{name}.bias"), 1, if concat { hc } else { per_head }, 0.0, rng);
        GatLayer { w_l, w_r, w_e, att, b, heads, per_head, concat, slope }
    }

    /// Layer output and the attention coefficients (one column per head,
    /// one row per attention edge).
    pub fn forward_with_attention(
        &self,
        t: &mut Tape,
        pv: &[Var],
        h: Var,
        block: &Block,
        drop: &mut Dropout,
        attention_dropout: f64,
    ) -> (Var, Var) {
        let xl = t.matmul(h, pv[self.w_l]);
        let xr = t.matmul(h, pv[self.w_r]);
        let s = t.edge_scores(xl, xr, pv[self.w_e], pv[self.att], block.loops.clone(), self.heads, self.slope);
        let alpha = t.segment_softmax(s, block.loops.dst.clone(), block.n_dst);
        let a = drop.apply(t, alpha, attention_dropout);
        let out = t.edge_aggregate(xl, a, None, block.loops.clone(), block.n_dst);
        let out = if self.concat { out } else { t.mean_heads(out, self.heads) };
        (t.add_row(out, pv[self.b]), alpha)
    }
}

/// Scaled dot-product attention over graph neighbourhoods with the edge
/// feature added to keys and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub w_e: usize,
    pub heads: usize,
    pub per_head: usize,
    pub concat: bool,
}

impl TransformerLayer {
    pub fn new(
        p: &mut Params,
        name: &str,
        fin: usize,
        heads: usize,
        per_head: usize,
        concat: bool,
        rng: &mut impl Rng,
    ) -> TransformerLayer {
        let hc = heads * per_head;
        let q = Linear::new(p, &format!("{name}.query"), fin, hc, rng);
        let k = Linear::new(p, &format!("{name}.key"), fin, hc, rng);
        let v = Linear::new(p, &format!("{name}.value"), fin, hc, rng);
        let w_e = p.add(format!("{name}.lin_edge"), 1, hc, 1.0, rng);
        TransformerLayer { q, k, v, w_e, heads, per_head, concat }
    }

    pub fn forward_with_attention(
        &self,
        t: &mut Tape,
        pv: &[Var],
        h: Var,
        block: &Block,
        drop: &mut Dropout,
        attention_dropout: f64,
    ) -> (Var, Var) {
        let q = self.q.forward(t, pv, h);
        let k = self.k.forward(t, pv, h);
        let v = self.v.forward(t, pv, h);
        let scale = 1.0 / (self.per_head as f64).sqrt();
        let s = t.edge_dot(q, k, pv[self.w_e], block.loops.clone(), self.heads, scale);
        let alpha = t.segment_softmax(s, block.loops.dst.clone(), block.n_dst);
        let a = drop.apply(t, alpha, attention_dropout);
        let out = t.edge_aggregate(v, a, Some(pv[self.w_e]), block.loops.clone(), block.n_dst);
        let out = if self.concat { out } else { t.mean_heads(out, self.heads) };
        (out, alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnLayer {
    Gcn(GcnLayer),
    Sage(SageLayer),
    Gat(GatLayer),
    Transformer(TransformerLayer),
}

impl GnnLayer {
    pub fn forward(&self, t: &mut Tape, pv: &[Var], h: Var, block: &Block, drop: &mut Dropout, attn: f64) -> Var {
        match self {
            GnnLayer::Gcn(l) => l.forward(t, pv, h, block),
            GnnLayer::Sage(l) => l.forward(t, pv, h, block),
            GnnLayer::Gat(l) => l.forward_with_attention(t, pv, h, block, drop, attn).0,
            GnnLayer::Transformer(l) => l.forward_with_attention(t, pv, h, block, drop, attn).0,
        }
    }
}

/// A GNN stack (possibly empty) followed by fully connected layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub architecture: Architecture,
    pub in_dim: usize,
    pub n_classes: usize,
    pub gnn: Vec<GnnLayer>,
    pub head: Vec<Linear>,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub params: Params,
}

impl Network {
    pub fn new(spec: &ModelSpec, in_dim: usize, n_classes: usize, rng: &mut impl Rng) -> Result<Network> {
        spec.validate()?;
        let arch = spec.architecture;
        if !arch.is_neural() {
            return Err(Error::config(format!("{arch} is not a neural architecture")));
        }
        if in_dim == 0 || n_classes < 2 {
            return Err(Error::Shape(format!("need features and at least two classes, got {in_dim}×{n_classes}")));
        }
        let mut p = Params::default();
        let h = spec.hidden;
        let n_gnn = if arch.is_gnn() { spec.gnn_layers } else { 0 };
        let mut gnn = Vec::with_capacity(n_gnn);
        for l in 0..n_gnn {
            let fin = if l == 0 { in_dim } else { h };
            let last = l + 1 == n_gnn;
            let name = format!("gnn{l}");
            let (per_head, concat) = if last { (h, false) } else { (h / spec.heads.max(1), true) };
            gnn.push(match arch {
                Architecture::Gcn => GnnLayer::Gcn(GcnLayer::new(&mut p, &name, fin, h, rng)),
                Architecture::Sage => GnnLayer::Sage(SageLayer::new(&mut p, &name, fin, h, rng)),
                Architecture::Gat => GnnLayer::Gat(GatLayer::new(
                    &mut p,
                    &name,
                    fin,
                    spec.heads,
                    per_head,
                    concat,
                    spec.negative_slope,
                    rng,
                )),
                Architecture::Transformer => GnnLayer::Transformer(TransformerLayer::new(
                    &mut p,
                    &name,
                    fin,
                    spec.heads,
                    per_head,
                    concat,
                    rng,
                )),
                _ => unreachable!("checked above"),
            });
        }
        let mut head = Vec::with_capacity(spec.standard_layers);
        for i in 0..spec.standard_layers {
            let fin = if i == 0 && n_gnn == 0 { in_dim } else { h };
            let fout = if i + 1 == spec.standard_layers { n_classes } else { h };
            head.push(Linear::new(&mut p, &format!("fc{i}"), fin, fout, rng));
        }
        Ok(Network {
            architecture: arch,
            in_dim,
            n_classes,
            gnn,
            head,
            dropout: spec.dropout,
            attention_dropout: spec.attention_dropout,
            params: p,
        })
    }

    pub fn check_inputs(&self, x: &Matrix, blocks: &[Block]) -> Result<()> {
        if x.ncols() != self.in_dim {
            return Err(Error::Shape(format!("expected {} feature columns, got {}", self.in_dim, x.ncols())));
        }
        if blocks.len() != self.gnn.len() {
            return Err(Error::Shape(format!("{} blocks for {} GNN layers", blocks.len(), self.gnn.len())));
        }
        let mut rows = x.nrows();
        for b in blocks {
            if b.n_src != rows {
                return Err(Error::Shape(format!("block expects {} input rows, got {rows}", b.n_src)));
            }
            rows = b.n_dst;
        }
        Ok(())
    }

    /// Logits of the destination rows of the last block (of every row of
    /// `x` without GNN layers).
    pub fn forward(&self, t: &mut Tape, pv: &[Var], x: Var, blocks: &[Block], drop: &mut Dropout) -> Var {
        let mut h = x;
        for (layer, block) in self.gnn.iter().zip(blocks) {
            h = layer.forward(t, pv, h, block, drop, self.attention_dropout);
            h = t.relu(h);
            h = drop.apply(t, h, self.dropout);
        }
        let last = self.head.len() - 1;
        for (i, lin) in self.head.iter().enumerate() {
            h = lin.forward(t, pv, h);
            if i < last {
                h = t.relu(h);
                h = drop.apply(t, h, self.dropout);
            }
        }
        h
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &Matrix, blocks: &[Block]) -> Result<Matrix> {
        self.check_inputs(x, blocks)?;
        let mut t = Tape::new();
        let pv = self.params.register(&mut t);
        let xv = t.constant(x.clone());
        let out = self.forward(&mut t, &pv, xv, blocks, &mut Dropout::eval());
        Ok(t.value(out).clone())
    }
}

/// Row-wise softmax.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}
