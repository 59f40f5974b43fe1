//! Localized subgraph generation.
//!
//! A subgraph is grown around a labeled center building: a circular buffer
//! expands in 10 m steps until it intersects `n_sub` footprints, and the
//! footprint centroids are joined by their Delaunay (Voronoi-adjacency)
//! edges. Hop-based alternatives cut ego networks out of one global
//! triangulation per region.

mod delaunay;
mod index;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use delaunay::{brute_force_delaunay_edges, delaunay_edges, DUPLICATE_TOL};
pub use index::SpatialIndex;
pub use split::{assign_splits, SplitRatios};

use crate::classes::Task;
use crate::error::{Error, Result};
use crate::feature::{
    feature_checksum, scale_edge_feature, BuildingRecord, CountryList, FeatureTable, NodeFeatureVector,
    NormalizationStats,
};
use crate::geom::Point;

pub const DEFAULT_N_SUB: usize = 20;
pub const BUFFER_START: f64 = 10.0;
pub const BUFFER_STEP: f64 = 10.0;
/// Hop limit of the unconstrained setting (one per GNN layer).
pub const UNCONSTRAINED_HOPS: usize = 4;
pub const DEFAULT_FANOUTS: [usize; 4] = [3, 3, 2, 2];
/// Edge feature threshold (m) stored with the dataset; models rescale from
/// the raw lengths with their own threshold.
pub const DEFAULT_XI: f64 = 50.0;

/// How subgraphs are cut out of the building layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Distance,
    TwoHop,
    Unconstrained,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Distance => "distance",
            Mode::TwoHop => "two_hop",
            Mode::Unconstrained => "unconstrained",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(Mode::Distance),
            "two_hop" | "two-hop" | "2hop" => Ok(Mode::TwoHop),
            "unconstrained" => Ok(Mode::Unconstrained),
            _ => Err(Error::InvalidConfig(format!("unknown mode '{s}'"))),
        }
    }
}

/// Which labeled nodes contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    All,
    Center,
}

impl fmt::Display for LabelPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelPolicy::All => "all",
            LabelPolicy::Center => "center",
        })
    }
}

impl FromStr for LabelPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LabelPolicy::All),
            "center" => Ok(LabelPolicy::Center),
            _ => Err(Error::InvalidConfig(format!("unknown label policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub i: usize,
    pub j: usize,
    /// Centroid distance (m).
    pub length: f64,
    /// Inverse-scaled length at the dataset threshold.
    pub feature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedSubgraph {
    /// Local index of the center node.
    pub center: usize,
    pub node_ids: Vec<String>,
    /// Raw (unnormalized) node features.
    pub features: Vec<NodeFeatureVector>,
    pub labels: Vec<Option<usize>>,
    pub flags: Vec<Option<Split>>,
    pub edges: Vec<SubgraphEdge>,
    pub split: Option<Split>,
    /// Final buffer radius (m); 0 for hop-based subgraphs.
    pub radius: f64,
}

impl LocalizedSubgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn center_id(&self) -> &str {
        &self.node_ids[self.center]
    }

    /// Labeled nodes flagged with `split`, restricted to the center under
    /// the center-only policy.
    pub fn flagged_nodes(&self, split: Split, policy: LabelPolicy) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_some() && self.flags[i] == Some(split))
            .filter(|&i| policy == LabelPolicy::All || i == self.center)
            .collect()
    }

    /// Neighbour lists derived from the edge list.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    /// Keeps the listed nodes (ascending local indices) and the edges among them.
    pub fn induced(&self, keep: &[usize]) -> LocalizedSubgraph {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                let (i, j) = (*remap.get(&e.i)?, *remap.get(&e.j)?);
                Some(SubgraphEdge { i, j, ..*e })
            })
            .collect();
        LocalizedSubgraph {
            center: remap[&self.center],
            node_ids: keep.iter().map(|&i| self.node_ids[i].clone()).collect(),
            features: keep.iter().map(|&i| self.features[i]).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            flags: keep.iter().map(|&i| self.flags[i]).collect(),
            edges,
            split: self.split,
            radius: self.radius,
        }
    }
}

/// Buildings with precomputed features and a spatial index.
#[derive(Debug, Clone)]
pub struct BuildingStore {
    pub buildings: Vec<BuildingRecord>,
    pub features: FeatureTable,
    pub index: SpatialIndex,
    pub countries: CountryList,
}

impl BuildingStore {
    pub fn new(buildings: Vec<BuildingRecord>, countries: CountryList) -> Result<BuildingStore> {
        for b in &buildings {
            b.validate()?;
        }
        let mut seen = HashSet::new();
        if let Some(dup) = buildings.iter().find(|b| !seen.insert(b.id.as_str())) {
            return Err(Error::Data(format!("duplicate building id {}", dup.id)));
        }
        let index = SpatialIndex::build(buildings.iter().map(|b| &b.polygon));
        let features = FeatureTable::compute(&buildings, &index, &countries)?;
        Ok(BuildingStore { buildings, features, index, countries })
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }
}

/// Smallest radius (multiple of 10 m) whose buffer around `center`
/// intersects at least `n_sub` footprints, or every footprint if the
/// region holds fewer. Returns the radius and the intersecting indices.
pub fn grow_buffer(center: usize, store: &BuildingStore, n_sub: usize) -> Result<(f64, Vec<usize>)> {
    store.index.ensure_nonempty()?;
    if n_sub == 0 {
        return Err(Error::InvalidConfig("n_sub must be at least 1".into()));
    }
    let c = store.buildings[center].centroid;
    let polygon = |i: usize| &store.buildings[i].polygon;
    let mut r = BUFFER_START;
    loop {
        let ids = store.index.query_circle(polygon, c, r);
        if ids.len() >= n_sub || ids.len() == store.index.len() {
            return Ok((r, ids));
        }
        r += BUFFER_STEP;
    }
}

/// Delaunay edges over `points` with lengths, tolerating fewer than two
/// distinct points (stacked footprints are chained to the first).
fn triangulate(points: &[Point], xi: f64) -> Result<Vec<SubgraphEdge>> {
    if points.len() < 2 {
        return Ok(Vec::new());
    }
    let pairs = match delaunay_edges(points) {
        Ok(p) => p,
        Err(Error::InvalidInput(_)) if points.iter().all(|p| p.is_finite()) => {
            (1..points.len()).map(|j| (0, j)).collect()
        }
        Err(e) => return Err(e),
    };
    pairs
        .into_iter()
        .map(|(i, j)| {
            let length = points[i].dist(points[j]).max(DUPLICATE_TOL);
            Ok(SubgraphEdge { i, j, length, feature: scale_edge_feature(length, xi)? })
        })
        .collect()
}

fn assemble(store: &BuildingStore, nodes: Vec<usize>, center: usize, edges: Vec<SubgraphEdge>, radius: f64) -> LocalizedSubgraph {
    let center = nodes.iter().position(|&n| n == center).expect("center among nodes");
    LocalizedSubgraph {
        center,
        node_ids: nodes.iter().map(|&i| store.buildings[i].id.clone()).collect(),
        features: nodes.iter().map(|&i| store.features.vectors[i]).collect(),
        labels: nodes.iter().map(|&i| store.buildings[i].class_label).collect(),
        flags: vec![None; nodes.len()],
        edges,
        split: None,
        radius,
    }
}

/// Distance-based subgraph around building `center`.
pub fn build_subgraph(center: usize, store: &BuildingStore, n_sub: usize, xi: f64) -> Result<LocalizedSubgraph> {
    if store.buildings[center].class_label.is_none() {
        return Err(Error::InvalidInput(format!(
            "center {} has no label",
            store.buildings[center].id
        )));
    }
    let (radius, nodes) = grow_buffer(center, store, n_sub)?;
    let points: Vec<Point> = nodes.iter().map(|&i| store.buildings[i].centroid).collect();
    let edges = triangulate(&points, xi)?;
    Ok(assemble(store, nodes, center, edges, radius))
}

/// Delaunay graph over all buildings, triangulated separately per country.
#[derive(Debug, Clone)]
pub struct GlobalGraph {
    pub neighbours: Vec<Vec<usize>>,
}

impl GlobalGraph {
    pub fn build(store: &BuildingStore) -> Result<GlobalGraph> {
        let mut regions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, b) in store.buildings.iter().enumerate() {
            regions.entry(b.country.as_str()).or_default().push(i);
        }
        let mut neighbours = vec![Vec::new(); store.len()];
        for members in regions.values() {
            let points: Vec<Point> = members.iter().map(|&i| store.buildings[i].centroid).collect();
            for e in triangulate(&points, DEFAULT_XI)? {
                let (a, b) = (members[e.i], members[e.j]);
                neighbours[a].push(b);
                neighbours[b].push(a);
            }
        }
        neighbours.iter_mut().for_each(|n| {
            n.sort_unstable();
            n.dedup();
        });
        Ok(GlobalGraph { neighbours })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> GlobalGraph {
        let mut neighbours = vec![Vec::new(); n];
        for &(a, b) in edges {
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        neighbours.iter_mut().for_each(|n| {
            n.sort_unstable();
            n.dedup();
        });
        GlobalGraph { neighbours }
    }

    /// Nodes within `k` hops of `center`, ascending.
    pub fn k_hop(&self, center: usize, k: usize) -> Result<Vec<usize>> {
        if center >= self.neighbours.len() {
            return Err(Error::InvalidInput(format!("node {center} is not in the graph")));
        }
        let mut depth: HashMap<usize, usize> = HashMap::from([(center, 0)]);
        let mut queue = VecDeque::from([center]);
        while let Some(u) = queue.pop_front() {
            let d = depth[&u];
            if d == k {
                continue;
            }
            for &v in &self.neighbours[u] {
                if let std::collections::hash_map::Entry::Vacant(e) = depth.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        let mut nodes: Vec<usize> = depth.into_keys().collect();
        nodes.sort_unstable();
        Ok(nodes)
    }
}

/// Induced subgraph on the nodes within `hops` of `center` in the global graph.
pub fn k_hop_subgraph(center: usize, graph: &GlobalGraph, store: &BuildingStore, hops: usize, xi: f64) -> Result<LocalizedSubgraph> {
    let nodes = graph.k_hop(center, hops)?;
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let mut edges = Vec::new();
    for (k, &u) in nodes.iter().enumerate() {
        for &v in &graph.neighbours[u] {
            if let Some(&l) = pos.get(&v) {
                if k < l {
                    let length = store.buildings[u].centroid.dist(store.buildings[v].centroid).max(DUPLICATE_TOL);
                    edges.push(SubgraphEdge { i: k, j: l, length, feature: scale_edge_feature(length, xi)? });
                }
            }
        }
    }
    Ok(assemble(store, nodes, center, edges, 0.0))
}

pub fn two_hop_subgraph(center: usize, graph: &GlobalGraph, store: &BuildingStore, xi: f64) -> Result<LocalizedSubgraph> {
    k_hop_subgraph(center, graph, store, 2, xi)
}

/// Fixed-fanout neighbour sampling from the center: at hop `h` each
/// frontier node keeps at most `fanouts[h]` randomly chosen neighbours.
/// The result holds the sampled nodes and the sampled edges only.
pub fn sample_neighbors(sg: &LocalizedSubgraph, fanouts: &[usize], rng: &mut impl rand::Rng) -> LocalizedSubgraph {
    let adj = sg.adjacency();
    let mut kept_nodes: HashSet<usize> = HashSet::from([sg.center]);
    let mut kept_edges: HashSet<(usize, usize)> = HashSet::new();
    let mut frontier = vec![sg.center];
    for &fan in fanouts {
        let mut next = Vec::new();
        for &u in &frontier {
            let chosen: Vec<usize> = if adj[u].len() <= fan {
                adj[u].clone()
            } else {
                adj[u].choose_multiple(rng, fan).copied().collect()
            };
            for v in chosen {
                kept_edges.insert((u.min(v), u.max(v)));
                if kept_nodes.insert(v) {
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    let mut keep: Vec<usize> = kept_nodes.into_iter().collect();
    keep.sort_unstable();
    let mut out = sg.induced(&keep);
    out.edges.retain(|e| kept_edges.contains(&(keep[e.i], keep[e.j])));
    out
}

/// Fraction of edges whose two labeled endpoints share a label.
pub fn homophily_ratio<'a>(subgraphs: impl IntoIterator<Item = &'a LocalizedSubgraph>) -> Result<f64> {
    let (mut same, mut total) = (0usize, 0usize);
    for sg in subgraphs {
        for e in &sg.edges {
            if let (Some(a), Some(b)) = (sg.labels[e.i], sg.labels[e.j]) {
                total += 1;
                same += usize::from(a == b);
            }
        }
    }
    if total == 0 {
        return Err(Error::Undefined("no edge has two labeled endpoints".into()));
    }
    Ok(same as f64 / total as f64)
}

pub const FORMAT_VERSION: u32 = 1;

/// Parameters a dataset was generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub feature_checksum: String,
    pub countries: CountryList,
    pub n_graphs: usize,
    pub n_sub: usize,
    pub seed: u64,
    pub mode: Mode,
    pub label_policy: LabelPolicy,
    pub task: Task,
    pub ratios: SplitRatios,
    pub xi: f64,
    pub hops: usize,
    pub n_subgraphs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDataset {
    pub manifest: Manifest,
    pub normalization: NormalizationStats,
    pub subgraphs: Vec<LocalizedSubgraph>,
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_graphs: usize,
    pub n_sub: usize,
    pub seed: u64,
    pub mode: Mode,
    pub label_policy: LabelPolicy,
    pub ratios: SplitRatios,
    pub xi: f64,
    pub hops: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_graphs: 5000,
            n_sub: DEFAULT_N_SUB,
            seed: 0,
            mode: Mode::Distance,
            label_policy: LabelPolicy::All,
            ratios: SplitRatios::default(),
            xi: DEFAULT_XI,
            hops: UNCONSTRAINED_HOPS,
        }
    }
}

/// Runs `f` on a pool of `workers` threads (0 = all cores).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Labeled centers in sampling order.
pub fn sample_centers(store: &BuildingStore, n_graphs: usize, seed: u64) -> Vec<usize> {
    let mut labeled: Vec<usize> = (0..store.len()).filter(|&i| store.buildings[i].class_label.is_some()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);
    labeled.truncate(n_graphs);
    labeled
}

/// Samples centers, cuts subgraphs, assigns splits and fits normalization.
pub fn generate_dataset(store: &BuildingStore, cfg: &GenerationConfig, workers: usize) -> Result<GraphDataset> {
    use rayon::prelude::*;
    if cfg.n_graphs == 0 {
        return Err(Error::InvalidConfig("n_graphs must be at least 1".into()));
    }
    scale_edge_feature(0.0, cfg.xi)?;
    let centers = sample_centers(store, cfg.n_graphs, cfg.seed);
    if centers.len() < 3 {
        return Err(Error::Data(format!("only {} labeled buildings available as centers", centers.len())));
    }
    let global = match cfg.mode {
        Mode::Distance => None,
        _ => Some(GlobalGraph::build(store)?),
    };
    let hops = match cfg.mode {
        Mode::Distance => 0,
        Mode::TwoHop => 2,
        Mode::Unconstrained => cfg.hops,
    };
    let subgraphs = with_workers(workers, || {
        centers
            .par_iter()
            .map(|&c| match &global {
                None => build_subgraph(c, store, cfg.n_sub, cfg.xi),
                Some(g) => k_hop_subgraph(c, g, store, hops, cfg.xi),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let subgraphs = assign_splits(subgraphs, cfg.ratios, cfg.seed)?;
    let normalization = fit_normalization(&subgraphs)?;
    Ok(GraphDataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            feature_checksum: feature_checksum(&store.countries),
            countries: store.countries.clone(),
            n_graphs: cfg.n_graphs,
            n_sub: cfg.n_sub,
            seed: cfg.seed,
            mode: cfg.mode,
            label_policy: cfg.label_policy,
            task: Task::Combined9,
            ratios: cfg.ratios,
            xi: cfg.xi,
            hops,
            n_subgraphs: subgraphs.len(),
        },
        normalization,
        subgraphs,
    })
}

/// Z-score statistics over the distinct nodes of training subgraphs.
pub fn fit_normalization(subgraphs: &[LocalizedSubgraph]) -> Result<NormalizationStats> {
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for sg in subgraphs.iter().filter(|s| s.split == Some(Split::Train)) {
        for (id, v) in sg.node_ids.iter().zip(&sg.features) {
            if seen.insert(id.as_str()) {
                rows.push(v);
            }
        }
    }
    NormalizationStats::fit(rows)
}

impl GraphDataset {
    /// Re-draws the subgraph split with `seed` and refits normalization.
    pub fn resplit(&self, seed: u64) -> Result<GraphDataset> {
        let subgraphs = assign_splits(self.subgraphs.clone(), self.manifest.ratios, seed)?;
        let normalization = fit_normalization(&subgraphs)?;
        Ok(GraphDataset { manifest: self.manifest.clone(), normalization, subgraphs })
    }

    pub fn with_label_policy(mut self, policy: LabelPolicy) -> GraphDataset {
        self.manifest.label_policy = policy;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.task.num_classes()
    }

    pub fn subgraphs_in(&self, split: Split) -> impl Iterator<Item = &LocalizedSubgraph> {
        self.subgraphs.iter().filter(move |s| s.split == Some(split))
    }
}

/// Maps nine-class labels into the label space of `task`.
pub fn remap_task(dataset: &GraphDataset, task: Task) -> Result<GraphDataset> {
    if dataset.manifest.task != Task::Combined9 {
        return Err(Error::InvalidState(format!(
            "labels are already remapped to {}",
            dataset.manifest.task
        )));
    }
    let mut out = dataset.clone();
    for sg in &mut out.subgraphs {
        for l in sg.labels.iter_mut().flatten() {
            *l = task.map_label(*l)?;
        }
    }
    out.manifest.task = task;
    Ok(out)
}
