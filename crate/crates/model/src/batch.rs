//! Collation of subgraphs into one disjoint graph and its per-layer blocks.

use std::collections::VecDeque;

use bldclass::feature::{scale_edge_feature, NormalizationStats, NUM_NODE_FEATURES};
use bldclass::graphgen::LocalizedSubgraph;

use crate::error::Result;
use crate::layers::Block;
use crate::tape::Matrix;

/// Input of one forward pass. Output rows of the network correspond to
/// `targets` in order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub blocks: Vec<Block>,
    /// (position in the collated subgraph list, local node index).
    pub targets: Vec<(usize, usize)>,
    pub labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    /// Output rows with a label, and those labels.
    pub fn labeled(&self) -> (Vec<usize>, Vec<usize>) {
        self.labels.iter().enumerate().filter_map(|(r, l)| l.map(|l| (r, l))).unzip()
    }
}

/// Collates `subgraphs` for a network with `layers` GNN layers. Only nodes
/// within `layers` hops of a target are kept; nodes are ordered by hop
/// distance so that each block's destinations prefix its sources. Edge
/// features are rescaled from the raw lengths with threshold `xi`.
pub fn collate(
    subgraphs: &[&LocalizedSubgraph],
    targets: &[Vec<usize>],
    layers: usize,
    xi: f64,
    norm: &NormalizationStats,
) -> Result<Batch> {
    assert_eq!(subgraphs.len(), targets.len(), "one target list per subgraph");
    // (level, subgraph, local node) of every kept node
    let mut kept: Vec<(usize, usize, usize)> = Vec::new();
    let mut offsets = Vec::with_capacity(subgraphs.len());
    let mut degree_all = Vec::new();
    let mut level_all = Vec::new();
    for (g, (sg, tg)) in subgraphs.iter().zip(targets).enumerate() {
        let n = sg.len();
        offsets.push(level_all.len());
        let mut adj = vec![Vec::new(); n];
        let mut deg = vec![1.0; n];
        for e in &sg.edges {
            let w = scale_edge_feature(e.length, xi)?;
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
            deg[e.i] += w;
            deg[e.j] += w;
        }
        let mut level = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for &t in tg {
            if level[t] != 0 {
                level[t] = 0;
                queue.push_back(t);
            }
        }
        while let Some(u) = queue.pop_front() {
            if level[u] >= layers {
                continue;
            }
            for &v in &adj[u] {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (i, &l) in level.iter().enumerate() {
            if l != usize::MAX {
                kept.push((l, g, i));
            }
        }
        degree_all.extend(deg);
        level_all.extend(level);
    }
    kept.sort_unstable();
    let total = level_all.len();
    let mut new_index = vec![usize::MAX; total];
    for (k, &(_, g, i)) in kept.iter().enumerate() {
        new_index[offsets[g] + i] = k;
    }
    let count_upto = |lvl: usize| kept.partition_point(|&(l, _, _)| l <= lvl);

    let mut x = Matrix::zeros((kept.len(), NUM_NODE_FEATURES));
    for (k, &(_, g, i)) in kept.iter().enumerate() {
        let mut row = subgraphs[g].features[i].0;
        norm.apply_row(&mut row);
        x.row_mut(k).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    let degree: Vec<f64> = kept.iter().map(|&(_, g, i)| degree_all[offsets[g] + i]).collect();

    // directed edges among kept nodes: (dst, src, feature)
    let mut directed = Vec::new();
    for (g, sg) in subgraphs.iter().enumerate() {
        for e in &sg.edges {
            let (a, b) = (new_index[offsets[g] + e.i], new_index[offsets[g] + e.j]);
            if a == usize::MAX || b == usize::MAX {
                continue;
            }
            let w = scale_edge_feature(e.length, xi)?;
            directed.push((b, a, w));
            directed.push((a, b, w));
        }
    }
    directed.sort_by(|p, q| (p.0, p.1).cmp(&(q.0, q.1)));

    let mut blocks = Vec::with_capacity(layers);
    for l in 0..layers {
        let n_src = count_upto(layers - l);
        let n_dst = count_upto(layers - 1 - l);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut weight = Vec::new();
        for &(d, s, w) in directed.iter().take_while(|e| e.0 < n_dst) {
            dst.push(d);
            src.push(s);
            weight.push(w);
        }
        blocks.push(Block::new(n_src, n_dst, src, dst, weight, degree[..n_src].to_vec())?);
    }
    let n_out = count_upto(0);
    let targets: Vec<(usize, usize)> = kept[..n_out].iter().map(|&(_, g, i)| (g, i)).collect();
    let labels = targets.iter().map(|&(g, i)| subgraphs[g].labels[i]).collect();
    if layers == 0 {
        x = x.slice(ndarray::s![..n_out, ..]).to_owned();
    }
    Ok(Batch { x, blocks, targets, labels })
}
