//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar output with
//! respect to every recorded value that depends on a parameter or on a leaf
//! marked as requiring a gradient.

use std::sync::Arc;

use ndarray::{Array2, Axis};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const NONE: usize = usize::MAX;

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Mask(Var, Matrix),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SegmentMax(Var, Vec<usize>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    SumHeads(Var, usize),
    MulHeads(Var, Var),
    MeanHeads(Var, usize),
    CrossEntropy(Var, Arc<[usize]>, Arc<[usize]>, Matrix),
    EdgeDot { q: Var, k: Var, w_e: Var, edges: EdgeList, heads: usize, scale: f64 },
    EdgeAggregate { v: Var, alpha: Var, w_e: Option<Var>, edges: EdgeList },
    EdgeScores { xl: Var, xr: Var, w_e: Var, att: Var, edges: EdgeList, heads: usize, slope: f64 },
}

/// Directed edges `src[e] → dst[e]` with a scalar weight each.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub weight: Arc<[f64]>,
}

impl EdgeList {
    pub fn new(src: Arc<[usize]>, dst: Arc<[usize]>, weight: Arc<[f64]>) -> EdgeList {
        assert!(src.len() == dst.len() && src.len() == weight.len(), "edge list: length mismatch");
        EdgeList { src, dst, weight }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

fn row(s: &[f64], r: usize, w: usize) -> &[f64] {
    &s[r * w..(r + 1) * w]
}

struct Entry {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    by_var: Vec<Option<Matrix>>,
    params: Vec<(usize, usize)>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.by_var[v.0].as_ref()
    }

    /// Gradient for every parameter id below `n`, summed over uses; zeros
    /// for parameters the output does not depend on.
    pub fn params(&self, shapes: &[(usize, usize)]) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros((r, c))).collect();
        for &(var, id) in &self.params {
            if let Some(g) = &self.by_var[var] {
                out[id] += g;
            }
        }
        out
    }
}

fn add_into(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.entries[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.entries[v.0].value.dim()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_standard_layout());
        self.entries.push(Entry { value, op, needs_grad });
        Var(self.entries.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.entries[v.0].needs_grad)
    }

    /// Constant input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, false)
    }

    /// Input whose gradient is wanted (used by gradient checks).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, true)
    }

    /// Trainable parameter with id `id`.
    pub fn param(&mut self, id: usize, value: &Matrix) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds the single-row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(b).0, 1, "add_row: bias must be one row");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::AddRow(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Multiplies every row of `a` elementwise by the single-row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(b).0, 1, "mul_row: factor must be one row");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MulRow(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(&[a]);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Matrix) -> Var {
        assert_eq!(self.shape(a), mask.dim(), "mask: shape mismatch");
        let v = self.value(a) * &mask;
        let ng = self.ng(&[a]);
        self.push(v, Op::Mask(a, mask), ng)
    }

    /// Rows `idx` of `a`, in order.
    pub fn gather(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let src = self.value(a);
        let d = src.ncols();
        let s = src.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(idx.len() * d);
        for &r in idx.iter() {
            out.extend_from_slice(&s[r * d..(r + 1) * d]);
        }
        let v = Matrix::from_shape_vec((idx.len(), d), out).expect("shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::Gather(a, idx), ng)
    }

    /// Sums row `r` of `a` into output row `idx[r]`; output has `n` rows.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "scatter_add: one index per row");
        let d = src.ncols();
        let s = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * d];
        for (r, &t) in idx.iter().enumerate() {
            let (o, i) = (&mut out[t * d..(t + 1) * d], &s[r * d..(r + 1) * d]);
            o.iter_mut().zip(i).for_each(|(o, i)| *o += i);
        }
        let v = Matrix::from_shape_vec((n, d), out).expect("shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::ScatterAdd(a, idx), ng)
    }

    /// Elementwise maximum of the rows of `a` grouped by `idx`; groups with
    /// no rows yield zeros. Ties go to the first row.
    pub fn segment_max(&mut self, a: Var, idx: &[usize], n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "segment_max: one index per row");
        let d = src.ncols();
        let s = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * d];
        let mut arg = vec![NONE; n * d];
        for (r, &t) in idx.iter().enumerate() {
            for k in 0..d {
                let x = s[r * d + k];
                let slot = t * d + k;
                if arg[slot] == NONE || x > out[slot] {
                    out[slot] = x;
                    arg[slot] = r;
                }
            }
        }
        let v = Matrix::from_shape_vec((n, d), out).expect("shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::SegmentMax(a, arg), ng)
    }

    /// Softmax of each column of `a` over the rows sharing a group in `idx`.
    pub fn segment_softmax(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "segment_softmax: one index per row");
        let d = src.ncols();
        let s = src.as_slice().expect("standard layout");
        let mut max = vec![f64::NEG_INFINITY; n * d];
        for (r, &t) in idx.iter().enumerate() {
            for k in 0..d {
                max[t * d + k] = max[t * d + k].max(s[r * d + k]);
            }
        }
        let mut out = vec![0.0; s.len()];
        let mut sum = vec![0.0; n * d];
        for (r, &t) in idx.iter().enumerate() {
            for k in 0..d {
                let e = (s[r * d + k] - max[t * d + k]).exp();
                out[r * d + k] = e;
                sum[t * d + k] += e;
            }
        }
        for (r, &t) in idx.iter().enumerate() {
            for k in 0..d {
                out[r * d + k] /= sum[t * d + k];
            }
        }
        let v = Matrix::from_shape_vec((idx.len(), d), out).expect("shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::SegmentSoftmax(a, idx, n), ng)
    }

    /// Sums each of `heads` equal column blocks: `n×(h·c)` → `n×h`.
    pub fn sum_heads(&mut self, a: Var, heads: usize) -> Var {
        let src = self.value(a);
        let (n, w) = src.dim();
        assert_eq!(w % heads, 0, "sum_heads: width not divisible by heads");
        let c = w / heads;
        let s = src.as_slice().expect("standard layout");
        let out: Vec<f64> = s.chunks_exact(c).map(|blk| blk.iter().sum()).collect();
        let v = Matrix::from_shape_vec((n, heads), out).expect("shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::SumHeads(a, heads), ng)
    }

    /// Scales head block `h` of row `r` of `a` by `w[r, h]`.
    pub fn mul_heads(&mut self, a: Var, w: Var) -> Var {
        let (src, wv) = (self.value(a), self.value(w));
        let (n, width) = src.dim();
        let heads = wv.ncols();
        assert_eq!(wv.nrows(), n, "mul_heads: row mismatch");
        assert_eq!(width % heads, 0, "mul_heads: width not divisible by heads");
        let c = width / heads;
        let ws = wv.as_slice().expect("standard layout");
        let mut out = src.as_slice().expect("standard layout").to_vec();
        for (blk, &f) in out.chunks_exact_mut(c).zip(ws) {
            blk.iter_mut().for_each(|x| *x *= f);
        }
        let v = Matrix::from_shape_vec((n, width), out).expect("shape");
        let ng = self.ng(&[a, w]);
        self.push(v, Op::MulHeads(a, w), ng)
    }

    /// Averages the `heads` column blocks: `n×(h·c)` → `n×c`.
    pub fn mean_heads(&mut self, a: Var, heads: usize) -> Var {
        let src = self.value(a);
        let (n, w) = src.dim();
        assert_eq!(w % heads, 0, "mean_heads: width not divisible by heads");
        let c = w / heads;
        let inv = 1.0 / heads as f64;
        let s = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * c];
        for (o, row) in out.chunks_exact_mut(c).zip(s.chunks_exact(w)) {
            for blk in row.chunks_exact(c) {
                o.iter_mut().zip(blk).for_each(|(o, x)| *o += x);
            }
            o.iter_mut().for_each(|x| *x *= inv);
        }
        let v = Matrix::from_shape_vec((n, c), out).expect("shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::MeanHeads(a, heads), ng)
    }

    /// Scaled per-head dot products `scale · q[dst]·(k[src] + weight·w_e)`,
    /// one row per edge and one column per head.
    pub fn edge_dot(&mut self, q: Var, k: Var, w_e: Var, edges: EdgeList, heads: usize, scale: f64) -> Var {
        let (qv, kv, wv) = (self.value(q), self.value(k), self.value(w_e));
        let width = qv.ncols();
        assert!(kv.ncols() == width && wv.dim() == (1, width), "edge_dot: width mismatch");
        assert_eq!(width % heads, 0, "edge_dot: width not divisible by heads");
        let c = width / heads;
        let (qs, ks, ws) = (qv.as_slice().expect("layout"), kv.as_slice().expect("layout"), wv.as_slice().expect("layout"));
        let mut out = vec![0.0; edges.len() * heads];
        for e in 0..edges.len() {
            let (qi, kj, ew) = (row(qs, edges.dst[e], width), row(ks, edges.src[e], width), edges.weight[e]);
            for h in 0..heads {
                let r = h * c..(h + 1) * c;
                let acc: f64 = qi[r.clone()].iter().zip(&kj[r.clone()]).zip(&ws[r]).map(|((q, k), w)| q * (k + ew * w)).sum();
                out[e * heads + h] = scale * acc;
            }
        }
        let v = Matrix::from_shape_vec((edges.len(), heads), out).expect("shape");
        let ng = self.ng(&[q, k, w_e]);
        self.push(v, Op::EdgeDot { q, k, w_e, edges, heads, scale }, ng)
    }

    /// `out[dst] += alpha[e, h] · (v[src] + weight·w_e)` over the columns of
    /// head `h`; the edge term is skipped without `w_e`.
    pub fn edge_aggregate(&mut self, v: Var, alpha: Var, w_e: Option<Var>, edges: EdgeList, n: usize) -> Var {
        let (vv, av) = (self.value(v), self.value(alpha));
        let width = vv.ncols();
        let heads = av.ncols();
        assert_eq!(av.nrows(), edges.len(), "edge_aggregate: one alpha row per edge");
        assert_eq!(width % heads, 0, "edge_aggregate: width not divisible by heads");
        let c = width / heads;
        let zero = vec![0.0; width];
        let ws = match w_e {
            Some(w) => {
                assert_eq!(self.shape(w), (1, width), "edge_aggregate: edge weight width");
                self.value(w).as_slice().expect("layout")
            }
            None => &zero[..],
        };
        let (vs, a) = (vv.as_slice().expect("layout"), av.as_slice().expect("layout"));
        let mut out = vec![0.0; n * width];
        for e in 0..edges.len() {
            let (vj, ew, t) = (row(vs, edges.src[e], width), edges.weight[e], edges.dst[e]);
            let o = &mut out[t * width..(t + 1) * width];
            for h in 0..heads {
                let f = a[e * heads + h];
                let r = h * c..(h + 1) * c;
                if w_e.is_some() {
                    for ((o, v), w) in o[r.clone()].iter_mut().zip(&vj[r.clone()]).zip(&ws[r]) {
                        *o += f * (v + ew * w);
                    }
                } else {
                    for (o, v) in o[r.clone()].iter_mut().zip(&vj[r]) {
                        *o += f * v;
                    }
                }
            }
        }
        let out = Matrix::from_shape_vec((n, width), out).expect("shape");
        let mut deps = vec![v, alpha];
        deps.extend(w_e);
        let ng = self.ng(&deps);
        self.push(out, Op::EdgeAggregate { v, alpha, w_e, edges }, ng)
    }

    /// Dynamic attention scores `att · LeakyReLU(xl[src] + xr[dst] +
    /// weight·w_e)` per head.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_scores(&mut self, xl: Var, xr: Var, w_e: Var, att: Var, edges: EdgeList, heads: usize, slope: f64) -> Var {
        let width = self.shape(xl).1;
        for v in [xr, w_e, att] {
            assert_eq!(self.shape(v).1, width, "edge_scores: width mismatch");
        }
        assert_eq!(width % heads, 0, "edge_scores: width not divisible by heads");
        let c = width / heads;
        let sl = |v: Var| self.value(v).as_slice().expect("layout");
        let (ls, rs, ws, at) = (sl(xl), sl(xr), sl(w_e), sl(att));
        let mut out = vec![0.0; edges.len() * heads];
        for e in 0..edges.len() {
            let (l, r, ew) = (row(ls, edges.src[e], width), row(rs, edges.dst[e], width), edges.weight[e]);
            for h in 0..heads {
                let mut acc = 0.0;
                for x in h * c..(h + 1) * c {
                    let z = l[x] + r[x] + ew * ws[x];
                    acc += at[x] * if z > 0.0 { z } else { slope * z };
                }
                out[e * heads + h] = acc;
            }
        }
        let v = Matrix::from_shape_vec((edges.len(), heads), out).expect("shape");
        let ng = self.ng(&[xl, xr, w_e, att]);
        self.push(v, Op::EdgeScores { xl, xr, w_e, att, edges, heads, slope }, ng)
    }

    /// Mean negative log-softmax of `labels[i]` in row `rows[i]` of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, rows: Arc<[usize]>, labels: Arc<[usize]>) -> Var {
        assert_eq!(rows.len(), labels.len(), "cross_entropy: one label per row");
        assert!(!rows.is_empty(), "cross_entropy: no rows");
        let z = self.value(logits);
        let k = z.ncols();
        let mut probs = Matrix::zeros((rows.len(), k));
        let mut loss = 0.0;
        for (i, (&r, &y)) in rows.iter().zip(labels.iter()).enumerate() {
            let row = z.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            for c in 0..k {
                probs[[i, c]] = (row[c] - lse).exp();
            }
        }
        let v = Matrix::from_elem((1, 1), loss / rows.len() as f64);
        let ng = self.ng(&[logits]);
        self.push(v, Op::CrossEntropy(logits, rows, labels, probs), ng)
    }

    /// Gradients of the scalar `out` (1×1) with respect to every value that
    /// needs one.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.shape(out), (1, 1), "backward: output must be scalar");
        let n = self.entries.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Matrix::ones((1, 1)));
        let mut params = Vec::new();
        for i in (0..=out.0).rev() {
            let e = &self.entries[i];
            if !e.needs_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else { continue };
            let want = |v: &Var| self.entries[v.0].needs_grad;
            match &e.op {
                Op::Leaf => grads[i] = Some(g),
                Op::Param(id) => {
                    params.push((i, *id));
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], g.dot(&self.value(*b).t()));
                    }
                    if want(b) {
                        add_into(&mut grads[b.0], self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => match (want(a), want(b)) {
                    (true, true) => {
                        add_into(&mut grads[a.0], g.clone());
                        add_into(&mut grads[b.0], g);
                    }
                    (true, false) => add_into(&mut grads[a.0], g),
                    (false, true) => add_into(&mut grads[b.0], g),
                    (false, false) => {}
                },
                Op::AddRow(a, b) => {
                    if want(b) {
                        add_into(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if want(a) {
                        add_into(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], &g * self.value(*b));
                    }
                    if want(b) {
                        add_into(&mut grads[b.0], &g * self.value(*a));
                    }
                }
                Op::MulRow(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], &g * self.value(*b));
                    }
                    if want(b) {
                        let gb = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Scale(a, c) => {
                    g *= *c;
                    add_into(&mut grads[a.0], g);
                }
                Op::Relu(a) => {
                    g.zip_mut_with(&e.value, |x, &y| if y <= 0.0 { *x = 0.0 });
                    add_into(&mut grads[a.0], g);
                }
                Op::LeakyRelu(a, slope) => {
                    g.zip_mut_with(self.value(*a), |x, &y| if y <= 0.0 { *x *= slope });
                    add_into(&mut grads[a.0], g);
                }
                Op::Mask(a, m) => {
                    g *= m;
                    add_into(&mut grads[a.0], g);
                }
                Op::Gather(a, idx) => {
                    let (rows, d) = self.shape(*a);
                    let mut ga = vec![0.0; rows * d];
                    let gs = g.as_slice().expect("standard layout");
                    for (r, &src) in idx.iter().enumerate() {
                        ga[src * d..(src + 1) * d].iter_mut().zip(&gs[r * d..(r + 1) * d]).for_each(|(o, i)| *o += i);
                    }
                    add_into(&mut grads[a.0], Matrix::from_shape_vec((rows, d), ga).expect("shape"));
                }
                Op::ScatterAdd(a, idx) => {
                    let d = g.ncols();
                    let gs = g.as_slice().expect("standard layout");
                    let mut ga = Vec::with_capacity(idx.len() * d);
                    for &t in idx.iter() {
                        ga.extend_from_slice(&gs[t * d..(t + 1) * d]);
                    }
                    add_into(&mut grads[a.0], Matrix::from_shape_vec((idx.len(), d), ga).expect("shape"));
                }
                Op::SegmentMax(a, arg) => {
                    let (rows, d) = self.shape(*a);
                    let mut ga = Matrix::zeros((rows, d));
                    let gs = g.as_slice().expect("standard layout");
                    for (slot, &r) in arg.iter().enumerate() {
                        if r != NONE {
                            ga[[r, slot % d]] += gs[slot];
                        }
                    }
                    add_into(&mut grads[a.0], ga);
                }
                Op::SegmentSoftmax(a, idx, n) => {
                    let y = e.value.as_slice().expect("standard layout");
                    let gs = g.as_slice().expect("standard layout");
                    let d = e.value.ncols();
                    let mut dot = vec![0.0; n * d];
                    for (r, &t) in idx.iter().enumerate() {
                        for k in 0..d {
                            dot[t * d + k] += y[r * d + k] * gs[r * d + k];
                        }
                    }
                    let mut ga = vec![0.0; y.len()];
                    for (r, &t) in idx.iter().enumerate() {
                        for k in 0..d {
                            ga[r * d + k] = y[r * d + k] * (gs[r * d + k] - dot[t * d + k]);
                        }
                    }
                    add_into(&mut grads[a.0], Matrix::from_shape_vec(e.value.dim(), ga).expect("shape"));
                }
                Op::SumHeads(a, heads) => {
                    let (rows, w) = self.shape(*a);
                    let c = w / heads;
                    let gs = g.as_slice().expect("standard layout");
                    let mut ga = Vec::with_capacity(rows * w);
                    for &x in gs {
                        ga.extend(std::iter::repeat(x).take(c));
                    }
                    add_into(&mut grads[a.0], Matrix::from_shape_vec((rows, w), ga).expect("shape"));
                }
                Op::MulHeads(a, w) => {
                    let (av, wv) = (self.value(*a), self.value(*w));
                    let heads = wv.ncols();
                    let (rows, width) = av.dim();
                    let c = width / heads;
                    let (asl, wsl, gs) = (
                        av.as_slice().expect("standard layout"),
                        wv.as_slice().expect("standard layout"),
                        g.as_slice().expect("standard layout"),
                    );
                    if want(a) {
                        let mut ga = gs.to_vec();
                        for (blk, &f) in ga.chunks_exact_mut(c).zip(wsl) {
                            blk.iter_mut().for_each(|x| *x *= f);
                        }
                        add_into(&mut grads[a.0], Matrix::from_shape_vec((rows, width), ga).expect("shape"));
                    }
                    if want(w) {
                        let gw: Vec<f64> = gs
                            .chunks_exact(c)
                            .zip(asl.chunks_exact(c))
                            .map(|(gb, ab)| gb.iter().zip(ab).map(|(x, y)| x * y).sum())
                            .collect();
                        add_into(&mut grads[w.0], Matrix::from_shape_vec((rows, heads), gw).expect("shape"));
                    }
                }
                Op::MeanHeads(a, heads) => {
                    let (rows, w) = self.shape(*a);
                    let c = w / heads;
                    let inv = 1.0 / *heads as f64;
                    let gs = g.as_slice().expect("standard layout");
                    let mut ga = Vec::with_capacity(rows * w);
                    for row in gs.chunks_exact(c) {
                        for _ in 0..*heads {
                            ga.extend(row.iter().map(|x| x * inv));
                        }
                    }
                    add_into(&mut grads[a.0], Matrix::from_shape_vec((rows, w), ga).expect("shape"));
                }
                Op::EdgeDot { q, k, w_e, edges, heads, scale } => {
                    let sl = |v: &Var| self.value(*v).as_slice().expect("layout");
                    let (qs, ks, ws, gs) = (sl(q), sl(k), sl(w_e), g.as_slice().expect("layout"));
                    let width = ws.len();
                    let c = width / heads;
                    let mut gq = want(q).then(|| vec![0.0; qs.len()]);
                    let mut gk = want(k).then(|| vec![0.0; ks.len()]);
                    let mut gw = want(w_e).then(|| vec![0.0; width]);
                    for e in 0..edges.len() {
                        let (s, d, ew) = (edges.src[e], edges.dst[e], edges.weight[e]);
                        for h in 0..*heads {
                            let f = scale * gs[e * heads + h];
                            let r = h * c..(h + 1) * c;
                            let qd = &qs[d * width..][r.clone()];
                            if let Some(gq) = gq.as_mut() {
                                let ks = &ks[s * width..][r.clone()];
                                for ((o, k), w) in gq[d * width..][r.clone()].iter_mut().zip(ks).zip(&ws[r.clone()]) {
                                    *o += f * (k + ew * w);
                                }
                            }
                            if let Some(gk) = gk.as_mut() {
                                for (o, q) in gk[s * width..][r.clone()].iter_mut().zip(qd) {
                                    *o += f * q;
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                for (o, q) in gw[r].iter_mut().zip(qd) {
                                    *o += f * q * ew;
                                }
                            }
                        }
                    }
                    for (v, gv) in [(q, gq), (k, gk), (w_e, gw)] {
                        if let Some(gv) = gv {
                            add_into(&mut grads[v.0], Matrix::from_shape_vec(self.shape(*v), gv).expect("shape"));
                        }
                    }
                }
                Op::EdgeAggregate { v, alpha, w_e, edges } => {
                    let (vs, a, gs) = (
                        self.value(*v).as_slice().expect("layout"),
                        self.value(*alpha).as_slice().expect("layout"),
                        g.as_slice().expect("layout"),
                    );
                    let width = self.shape(*v).1;
                    let heads = self.shape(*alpha).1;
                    let c = width / heads;
                    let zero = vec![0.0; width];
                    let ws = w_e.map_or(&zero[..], |w| self.value(w).as_slice().expect("layout"));
                    let mut gv = want(v).then(|| vec![0.0; vs.len()]);
                    let mut ga = want(alpha).then(|| vec![0.0; a.len()]);
                    let mut gw = w_e.filter(|w| want(w)).map(|_| vec![0.0; width]);
                    for e in 0..edges.len() {
                        let (s, d, ew) = (edges.src[e], edges.dst[e], edges.weight[e]);
                        for h in 0..heads {
                            let f = a[e * heads + h];
                            let r = h * c..(h + 1) * c;
                            let gd = &gs[d * width..][r.clone()];
                            if let Some(ga) = ga.as_mut() {
                                let vj = &vs[s * width..][r.clone()];
                                let da: f64 = if w_e.is_some() {
                                    gd.iter().zip(vj).zip(&ws[r.clone()]).map(|((g, v), w)| g * (v + ew * w)).sum()
                                } else {
                                    gd.iter().zip(vj).map(|(g, v)| g * v).sum()
                                };
                                ga[e * heads + h] += da;
                            }
                            if let Some(gv) = gv.as_mut() {
                                for (o, g) in gv[s * width..][r.clone()].iter_mut().zip(gd) {
                                    *o += g * f;
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                for (o, g) in gw[r].iter_mut().zip(gd) {
                                    *o += g * f * ew;
                                }
                            }
                        }
                    }
                    if let Some(gv) = gv {
                        add_into(&mut grads[v.0], Matrix::from_shape_vec(self.shape(*v), gv).expect("shape"));
                    }
                    if let Some(ga) = ga {
                        add_into(&mut grads[alpha.0], Matrix::from_shape_vec(self.shape(*alpha), ga).expect("shape"));
                    }
                    if let (Some(w), Some(gw)) = (w_e, gw) {
                        add_into(&mut grads[w.0], Matrix::from_shape_vec((1, width), gw).expect("shape"));
                    }
                }
                Op::EdgeScores { xl, xr, w_e, att, edges, heads, slope } => {
                    let sl = |v: &Var| self.value(*v).as_slice().expect("layout");
                    let (ls, rs, ws, at, gs) = (sl(xl), sl(xr), sl(w_e), sl(att), g.as_slice().expect("layout"));
                    let width = ws.len();
                    let c = width / heads;
                    let mut gl = want(xl).then(|| vec![0.0; ls.len()]);
                    let mut gr = want(xr).then(|| vec![0.0; rs.len()]);
                    let mut gw = want(w_e).then(|| vec![0.0; width]);
                    let mut gt = want(att).then(|| vec![0.0; width]);
                    let mut dz = vec![0.0; width];
                    let mut act = vec![0.0; width];
                    for e in 0..edges.len() {
                        let (s, d, ew) = (edges.src[e], edges.dst[e], edges.weight[e]);
                        let (l, r) = (&ls[s * width..(s + 1) * width], &rs[d * width..(d + 1) * width]);
                        for x in 0..width {
                            let z = l[x] + r[x] + ew * ws[x];
                            let f = gs[e * heads + x / c];
                            let (a, deriv) = if z > 0.0 { (z, 1.0) } else { (slope * z, *slope) };
                            act[x] = f * a;
                            dz[x] = f * at[x] * deriv;
                        }
                        if let Some(gl) = gl.as_mut() {
                            for (o, v) in gl[s * width..(s + 1) * width].iter_mut().zip(&dz) {
                                *o += v;
                            }
                        }
                        if let Some(gr) = gr.as_mut() {
                            for (o, v) in gr[d * width..(d + 1) * width].iter_mut().zip(&dz) {
                                *o += v;
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            for (o, v) in gw.iter_mut().zip(&dz) {
                                *o += v * ew;
                            }
                        }
                        if let Some(gt) = gt.as_mut() {
                            for (o, v) in gt.iter_mut().zip(&act) {
                                *o += v;
                            }
                        }
                    }
                    for (v, gv) in [(xl, gl), (xr, gr), (w_e, gw), (att, gt)] {
                        if let Some(gv) = gv {
                            add_into(&mut grads[v.0], Matrix::from_shape_vec(self.shape(*v), gv).expect("shape"));
                        }
                    }
                }
                Op::CrossEntropy(a, rows, labels, probs) => {
                    let scale = g[[0, 0]] / rows.len() as f64;
                    let mut ga = Matrix::zeros(self.shape(*a));
                    for (i, (&r, &y)) in rows.iter().zip(labels.iter()).enumerate() {
                        for c in 0..probs.ncols() {
                            ga[[r, c]] += scale * (probs[[i, c]] - f64::from(u8::from(c == y)));
                        }
                    }
                    add_into(&mut grads[a.0], ga);
                }
            }
        }
        Grads { by_var: grads, params }
    }
}
