use std::sync::Arc;

use bldclass_model::layers::{Block, Dropout, GatLayer, GcnLayer, Linear, Network, Params, SageLayer, TransformerLayer};
use bldclass_model::tape::{EdgeList, Matrix, Tape, Var};
use bldclass_model::{Architecture, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

/// Scalar probe `sum(out * probe)` built on the tape.
fn reduce(t: &mut Tape, out: Var, probe: &Matrix) -> Var {
    let (r, c) = t.shape(out);
    let p = t.constant(probe.clone());
    let m = t.mul(out, p);
    let left = t.constant(Matrix::ones((1, r)));
    let right = t.constant(Matrix::ones((c, 1)));
    let s = t.matmul(left, m);
    t.matmul(s, right)
}

/// Norm-based relative error with an absolute floor for gradients that
/// vanish identically (a key bias under softmax, for instance).
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-6)
}

/// Compares tape gradients of `f` (reduced with a random probe unless it is
/// already scalar) against central differences, for every parameter and
/// every input.
fn check<F>(label: &str, params: &Params, inputs: &[Matrix], seed: u64, f: F)
where
    F: Fn(&mut Tape, &[Var], &[Var]) -> Var,
{
    let eval = |ps: &Params, xs: &[Matrix], probe: Option<&Matrix>| -> (Tape, Vec<Var>, Var) {
        let mut t = Tape::new();
        let pv = ps.register(&mut t);
        let iv: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let out = f(&mut t, &pv, &iv);
        let out = match probe {
            Some(p) => reduce(&mut t, out, p),
            None => out,
        };
        (t, iv, out)
    };
    let probe = {
        let mut t = Tape::new();
        let pv = params.register(&mut t);
        let iv: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
        let out = f(&mut t, &pv, &iv);
        let (r, c) = t.shape(out);
        if (r, c) == (1, 1) {
            None
        } else {
            Some(random_matrix(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), r, c))
        }
    };
    let scalar = |ps: &Params, xs: &[Matrix]| {
        let (t, _, out) = eval(ps, xs, probe.as_ref());
        t.value(out)[[0, 0]]
    };
    let (t, iv, out) = eval(params, inputs, probe.as_ref());
    let grads = t.backward(out);
    let pgrads = grads.params(&params.shapes());

    for (id, g) in pgrads.iter().enumerate() {
        let mut fd = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let mut p = params.clone();
            let c = p.values[id].ncols();
            p.values[id][[k / c, k % c]] += H;
            let up = scalar(&p, inputs);
            p.values[id][[k / c, k % c]] -= 2.0 * H;
            let down = scalar(&p, inputs);
            fd.push((up - down) / (2.0 * H));
        }
        let err = rel_err(g.as_slice().unwrap(), &fd);
        assert!(err < TOL, "{label} seed {seed}: parameter {} relative error {err:e}", params.names[id]);
    }
    for (n, x) in inputs.iter().enumerate() {
        let g = grads.of(iv[n]).cloned().unwrap_or_else(|| Matrix::zeros(x.dim()));
        let mut fd = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let mut xs = inputs.to_vec();
            let c = x.ncols();
            xs[n][[k / c, k % c]] += H;
            let up = scalar(params, &xs);
            xs[n][[k / c, k % c]] -= 2.0 * H;
            let down = scalar(params, &xs);
            fd.push((up - down) / (2.0 * H));
        }
        let err = rel_err(g.as_slice().unwrap(), &fd);
        assert!(err < TOL, "{label} seed {seed}: input {n} relative error {err:e}");
    }
}

fn random_graph(rng: &mut impl Rng, n: usize) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.45) {
                edges.push((i, j, rng.gen_range(0.05..1.0)));
            }
        }
    }
    edges
}

/// Pruned block: `n_dst` of `n_src` nodes are destinations.
fn random_block(rng: &mut impl Rng, n_src: usize, n_dst: usize) -> Block {
    let (mut src, mut dst, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for d in 0..n_dst {
        for s in 0..n_src {
            if s != d && rng.gen_bool(0.5) {
                src.push(s);
                dst.push(d);
                w.push(rng.gen_range(0.0..1.0));
            }
        }
    }
    let degree = (0..n_src).map(|_| rng.gen_range(1.0..4.0)).collect();
    Block::new(n_src, n_dst, src, dst, w, degree).unwrap()
}

fn full_or_pruned(rng: &mut impl Rng, seed: u64) -> (usize, Block) {
    let n = rng.gen_range(3..8);
    if seed % 2 == 0 {
        let e = random_graph(rng, n);
        (n, Block::full(n, &e).unwrap())
    } else {
        let d = rng.gen_range(1..n);
        (n, random_block(rng, n, d))
    }
}

#[test]
fn tape_operations_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 6, 3);
        let c = random_matrix(&mut rng, 4, 6);
        let row = random_matrix(&mut rng, 1, 6);
        let heads = random_matrix(&mut rng, 4, 2);
        let mask = Matrix::from_shape_fn((4, 6), |_| if rng.gen_bool(0.3) { 0.0 } else { 1.5 });
        let idx: Arc<[usize]> = (0..7).map(|_| rng.gen_range(0..4)).collect();
        let seg: Arc<[usize]> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let rows: Arc<[usize]> = vec![0, 2, 3, 2].into();
        let labels: Arc<[usize]> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let p = Params::default();

        check("matmul", &p, &[a.clone(), b.clone()], seed, |t, _, x| t.matmul(x[0], x[1]));
        check("add", &p, &[a.clone(), c.clone()], seed, |t, _, x| t.add(x[0], x[1]));
        check("add_row", &p, &[a.clone(), row.clone()], seed, |t, _, x| t.add_row(x[0], x[1]));
        check("mul", &p, &[a.clone(), c.clone()], seed, |t, _, x| t.mul(x[0], x[1]));
        check("mul_row", &p, &[a.clone(), row.clone()], seed, |t, _, x| t.mul_row(x[0], x[1]));
        check("scale", &p, &[a.clone()], seed, |t, _, x| t.scale(x[0], -2.5));
        check("relu", &p, &[a.clone()], seed, |t, _, x| t.relu(x[0]));
        check("leaky_relu", &p, &[a.clone()], seed, |t, _, x| t.leaky_relu(x[0], 0.2));
        let m = mask.clone();
        check("mask", &p, &[a.clone()], seed, move |t, _, x| t.mask(x[0], m.clone()));
        let i = idx.clone();
        check("gather", &p, &[a.clone()], seed, move |t, _, x| t.gather(x[0], i.clone()));
        let s = seg.clone();
        check("scatter_add", &p, &[a.clone()], seed, move |t, _, x| t.scatter_add(x[0], s.clone(), 3));
        let s = seg.clone();
        check("segment_max", &p, &[a.clone()], seed, move |t, _, x| t.segment_max(x[0], &s, 3));
        let s = seg.clone();
        check("segment_softmax", &p, &[a.clone()], seed, move |t, _, x| t.segment_softmax(x[0], s.clone(), 3));
        check("sum_heads", &p, &[a.clone()], seed, |t, _, x| t.sum_heads(x[0], 2));
        check("mul_heads", &p, &[a.clone(), heads.clone()], seed, |t, _, x| t.mul_heads(x[0], x[1]));
        check("mean_heads", &p, &[a.clone()], seed, |t, _, x| t.mean_heads(x[0], 3));
        let (r, l) = (rows.clone(), labels.clone());
        check("cross_entropy", &p, &[a.clone()], seed, move |t, _, x| t.cross_entropy(x[0], r.clone(), l.clone()));

        let edges = random_edges(&mut rng, 4, 3, 7);
        let alpha = random_matrix(&mut rng, 7, 2);
        let att = random_matrix(&mut rng, 1, 6);
        let e = edges.clone();
        check("edge_dot", &p, &[a.clone(), c.clone(), row.clone()], seed, move |t, _, x| {
            t.edge_dot(x[0], x[1], x[2], e.clone(), 2, 0.7)
        });
        let e = edges.clone();
        check("edge_aggregate", &p, &[a.clone(), alpha.clone(), row.clone()], seed, move |t, _, x| {
            t.edge_aggregate(x[0], x[1], Some(x[2]), e.clone(), 3)
        });
        let e = edges.clone();
        check("edge_aggregate without edge term", &p, &[a.clone(), alpha.clone()], seed, move |t, _, x| {
            t.edge_aggregate(x[0], x[1], None, e.clone(), 3)
        });
        let e = edges.clone();
        check("edge_scores", &p, &[a.clone(), c.clone(), row.clone(), att.clone()], seed, move |t, _, x| {
            t.edge_scores(x[0], x[1], x[2], x[3], e.clone(), 2, 0.2)
        });
    }
}

fn random_edges(rng: &mut impl Rng, n_src: usize, n_dst: usize, n: usize) -> EdgeList {
    let src: Arc<[usize]> = (0..n).map(|_| rng.gen_range(0..n_src)).collect();
    let dst: Arc<[usize]> = (0..n).map(|_| rng.gen_range(0..n_dst)).collect();
    let w: Arc<[f64]> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    EdgeList::new(src, dst, w)
}

#[test]
fn fused_edge_operations_match_their_composition() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_src, n_dst, n_e, heads, c) = (6, 4, 15, 3, 4);
        let w = heads * c;
        let edges = random_edges(&mut rng, n_src, n_dst, n_e);
        let q = random_matrix(&mut rng, n_src, w);
        let k = random_matrix(&mut rng, n_src, w);
        let we = random_matrix(&mut rng, 1, w);
        let att = random_matrix(&mut rng, 1, w);
        let alpha = random_matrix(&mut rng, n_e, heads);
        let mut t = Tape::new();
        let (qv, kv, wv, av, alv) =
            (t.input(q), t.input(k), t.input(we), t.input(att), t.input(alpha));
        let ew = t.constant(Matrix::from_shape_vec((n_e, 1), edges.weight.to_vec()).unwrap());
        let ee = t.matmul(ew, wv);

        let fused = t.edge_dot(qv, kv, wv, edges.clone(), heads, 0.5);
        let qi = t.gather(qv, edges.dst.clone());
        let kj = t.gather(kv, edges.src.clone());
        let kj = t.add(kj, ee);
        let s = t.mul(qi, kj);
        let s = t.sum_heads(s, heads);
        let composed = t.scale(s, 0.5);
        assert!(max_diff(t.value(fused), t.value(composed)) < 1e-12);

        let fused = t.edge_aggregate(kv, alv, Some(wv), edges.clone(), n_dst);
        let vj = t.gather(kv, edges.src.clone());
        let vj = t.add(vj, ee);
        let m = t.mul_heads(vj, alv);
        let composed = t.scatter_add(m, edges.dst.clone(), n_dst);
        assert!(max_diff(t.value(fused), t.value(composed)) < 1e-12);

        let fused = t.edge_scores(qv, kv, wv, av, edges.clone(), heads, 0.2);
        let l = t.gather(qv, edges.src.clone());
        let r = t.gather(kv, edges.dst.clone());
        let z = t.add(l, r);
        let z = t.add(z, ee);
        let z = t.leaky_relu(z, 0.2);
        let z = t.mul_row(z, av);
        let composed = t.sum_heads(z, heads);
        assert!(max_diff(t.value(fused), t.value(composed)) < 1e-12);
    }
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn linear_layer_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        let lin = Linear::new(&mut p, "fc", 5, 3, &mut rng);
        p.values[lin.b] = random_matrix(&mut rng, 1, 3);
        let x = random_matrix(&mut rng, 6, 5);
        check("linear", &p, &[x], seed, |t, pv, x| lin.forward(t, pv, x[0]));
    }
}

#[test]
fn gcn_layer_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, block) = full_or_pruned(&mut rng, seed);
        let mut p = Params::default();
        let layer = GcnLayer::new(&mut p, "gcn", 4, 3, &mut rng);
        p.values[layer.b] = random_matrix(&mut rng, 1, 3);
        let x = random_matrix(&mut rng, n, 4);
        check("gcn", &p, &[x], seed, |t, pv, x| layer.forward(t, pv, x[0], &block));
    }
}

#[test]
fn sage_layer_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (n, block) = full_or_pruned(&mut rng, seed);
        let mut p = Params::default();
        let layer = SageLayer::new(&mut p, "sage", 4, 3, &mut rng);
        p.values[layer.b] = random_matrix(&mut rng, 1, 3);
        let x = random_matrix(&mut rng, n, 4);
        check("sage", &p, &[x], seed, |t, pv, x| layer.forward(t, pv, x[0], &block));
    }
}

#[test]
fn gat_layer_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (n, block) = full_or_pruned(&mut rng, seed);
        let concat = seed % 3 != 0;
        let mut p = Params::default();
        let layer = GatLayer::new(&mut p, "gat", 4, 2, 3, concat, 0.2, &mut rng);
        let bw = p.values[layer.b].ncols();
        p.values[layer.b] = random_matrix(&mut rng, 1, bw);
        let x = random_matrix(&mut rng, n, 4);
        check("gat", &p, &[x], seed, |t, pv, x| {
            layer.forward_with_attention(t, pv, x[0], &block, &mut Dropout::eval(), 0.0).0
        });
        check("gat attention", &p, &[random_matrix(&mut rng, n, 4)], seed, |t, pv, x| {
            layer.forward_with_attention(t, pv, x[0], &block, &mut Dropout::eval(), 0.0).1
        });
    }
}

#[test]
fn transformer_layer_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (n, block) = full_or_pruned(&mut rng, seed);
        let concat = seed % 3 != 0;
        let mut p = Params::default();
        let layer = TransformerLayer::new(&mut p, "tf", 4, 2, 3, concat, &mut rng);
        for b in [layer.q.b, layer.k.b, layer.v.b] {
            p.values[b] = random_matrix(&mut rng, 1, 6);
        }
        let x = random_matrix(&mut rng, n, 4);
        check("transformer", &p, &[x], seed, |t, pv, x| {
            layer.forward_with_attention(t, pv, x[0], &block, &mut Dropout::eval(), 0.0).0
        });
    }
}

fn chain(rng: &mut impl Rng, sizes: &[usize]) -> Vec<Block> {
    sizes.windows(2).map(|w| random_block(rng, w[0], w[1])).collect()
}

fn network_check(arch: Architecture, seed: u64, train_mode: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let spec = ModelSpec {
        hidden: 6,
        heads: if arch == Architecture::Transformer || arch == Architecture::Gat { 2 } else { 1 },
        gnn_layers: if arch.is_gnn() { 2 } else { 0 },
        fanouts: None,
        dropout: 0.3,
        attention_dropout: 0.2,
        ..ModelSpec::desk(arch)
    };
    let mut net = Network::new(&spec, 5, 3, &mut rng).unwrap();
    for v in net.params.values.iter_mut() {
        if v.nrows() == 1 {
            *v = random_matrix(&mut rng, 1, v.ncols());
        }
    }
    let n0 = rng.gen_range(5..9);
    let n1 = rng.gen_range(2..n0);
    let n2 = rng.gen_range(1..=n1);
    let blocks = if arch.is_gnn() { chain(&mut rng, &[n0, n1, n2]) } else { Vec::new() };
    let out_rows = if arch.is_gnn() { n2 } else { n0 };
    let rows: Arc<[usize]> = (0..out_rows).collect();
    let labels: Arc<[usize]> = (0..out_rows).map(|_| rng.gen_range(0..3)).collect();
    let x = random_matrix(&mut rng, n0, 5);
    let params = net.params.clone();
    net.params = Params::default();
    check(&format!("{arch} network"), &params, &[x], seed, |t, pv, x| {
        let mut drng = ChaCha8Rng::seed_from_u64(seed);
        let mut drop = if train_mode { Dropout::train(&mut drng) } else { Dropout::eval() };
        let z = net.forward(t, pv, x[0], &blocks, &mut drop);
        t.cross_entropy(z, rows.clone(), labels.clone())
    });
}

#[test]
fn composed_networks_match_finite_differences() {
    for arch in [Architecture::Mlp, Architecture::Gcn, Architecture::Sage, Architecture::Gat, Architecture::Transformer] {
        for seed in 0..INSTANCES {
            network_check(arch, seed, false);
        }
    }
}

#[test]
fn transformer_network_with_dropout_masks() {
    for seed in 0..INSTANCES {
        network_check(Architecture::Transformer, seed, true);
    }
}
