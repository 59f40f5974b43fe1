//! Node and edge features.
//!
//! Each building gets a 69-dimensional vector: 10 building-level shape
//! indicators, 10 block-level indicators, 15 land-use indicators plus an
//! urban-atlas coverage flag, 3 degree-of-urbanization indicators and 30
//! country indicators. Edges carry one feature, the inverse-scaled length.
//! Labels are never part of the input.

mod normalize;

pub use normalize::{NormalizationStats, NUM_NUMERICAL};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::classes::{Degurba, DEFAULT_COUNTRIES, LAND_USE_NAMES, NUM_BUILDING_CLASSES, NUM_LAND_USE};
use crate::error::{Error, Result};
use crate::geom::{
    adjacency_stats, anisotropy_index, convexity, count_corners, elongation, footprint_area,
    longest_axis_length, merge_outlines, orientation, perimeter, MergedOutline, Point, Polygon,
};
use crate::graphgen::SpatialIndex;

pub const NUM_NODE_FEATURES: usize = 69;
pub const NUM_COUNTRIES: usize = 30;

/// Bounding-box gap (m) within which buildings are adjacency candidates.
pub const ADJACENCY_RANGE: f64 = 0.5;

/// Feature groups and their column ranges, in vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    BuildingLevel,
    BlockLevel,
    LandUse,
    Degurba,
    Country,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::BuildingLevel,
        FeatureGroup::BlockLevel,
        FeatureGroup::LandUse,
        FeatureGroup::Degurba,
        FeatureGroup::Country,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            FeatureGroup::BuildingLevel => 0..10,
            FeatureGroup::BlockLevel => 10..20,
            FeatureGroup::LandUse => 20..36,
            FeatureGroup::Degurba => 36..39,
            FeatureGroup::Country => 39..69,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::BuildingLevel => "building_level",
            FeatureGroup::BlockLevel => "block_level",
            FeatureGroup::LandUse => "land_use",
            FeatureGroup::Degurba => "degurba",
            FeatureGroup::Country => "country",
        }
    }

    pub fn of_column(col: usize) -> FeatureGroup {
        *FeatureGroup::ALL
            .iter()
            .find(|g| g.range().contains(&col))
            .expect("column within the feature vector")
    }
}

const BUILDING_NAMES: [&str; 10] = [
    "area",
    "perimeter",
    "corners",
    "anisotropy",
    "longest_axis",
    "elongation",
    "convexity",
    "orientation",
    "adjacent_count",
    "shared_wall_length",
];

const BLOCK_NAMES: [&str; 10] = [
    "block_num_footprints",
    "block_avg_area",
    "block_std_area",
    "block_total_area",
    "block_perimeter",
    "block_longest_axis",
    "block_elongation",
    "block_convexity",
    "block_orientation",
    "block_corners",
];

/// Column names for a country list (must have exactly 30 entries).
pub fn feature_names(countries: &CountryList) -> Vec<String> {
    let mut names: Vec<String> = BUILDING_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(BLOCK_NAMES.iter().map(|s| s.to_string()));
    names.extend(LAND_USE_NAMES.iter().map(|s| format!("lu_{s}")));
    names.push("lu_urban_atlas_coverage".into());
    names.extend(Degurba::ALL.iter().map(|d| format!("degurba_{}", d.name())));
    names.extend(countries.codes().iter().map(|c| format!("country_{c}")));
    names
}

/// SHA-256 over the newline-joined feature names; pins the column order
/// of stored datasets.
pub fn feature_checksum(countries: &CountryList) -> String {
    let joined = feature_names(countries).join("\n");
    hex::encode(Sha256::digest(joined.as_bytes()))
}

/// Ordered list of the 30 country codes used for the country indicators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryList(Vec<String>);

impl Default for CountryList {
    fn default() -> Self {
        CountryList(DEFAULT_COUNTRIES.iter().map(|c| c.to_string()).collect())
    }
}

impl CountryList {
    /// Lower-cases and sorts the codes; exactly 30 distinct codes required.
    pub fn new(codes: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let mut v: Vec<String> = codes.into_iter().map(|c| c.as_ref().trim().to_lowercase()).collect();
        v.sort();
        v.dedup();
        if v.len() != NUM_COUNTRIES {
            return Err(Error::InvalidConfig(format!(
                "country list must contain {NUM_COUNTRIES} distinct codes, got {}",
                v.len()
            )));
        }
        Ok(CountryList(v))
    }

    pub fn codes(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        let code = code.to_lowercase();
        self.0.binary_search(&code).ok()
    }
}

/// A building with its footprint and context attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub id: String,
    pub polygon: Polygon,
    pub centroid: Point,
    pub raw_class: Option<String>,
    pub class_label: Option<usize>,
    pub country: String,
    pub land_use: Option<usize>,
    pub urban_atlas_covered: bool,
    pub degurba: Option<Degurba>,
}

impl BuildingRecord {
    pub fn new(id: impl Into<String>, polygon: Polygon) -> Self {
        let centroid = polygon.centroid();
        BuildingRecord {
            id: id.into(),
            polygon,
            centroid,
            raw_class: None,
            class_label: None,
            country: String::new(),
            land_use: None,
            urban_atlas_covered: false,
            degurba: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.class_label {
            if c >= NUM_BUILDING_CLASSES {
                return Err(Error::Data(format!("building {}: class id {c} out of range", self.id)));
            }
        }
        if let Some(lu) = self.land_use {
            if lu >= NUM_LAND_USE {
                return Err(Error::Data(format!("building {}: land-use id {lu} out of range", self.id)));
            }
        }
        Ok(())
    }
}

/// Connected component of buildings under the shares-a-wall relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Indices into the building slice, ascending.
    pub members: Vec<usize>,
    pub member_ids: Vec<String>,
    pub merged_outline: MergedOutline,
}

/// Wall-sharing adjacency of every building, with candidate lists.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    /// For each building, indices of wall-sharing neighbours (ascending).
    pub neighbours: Vec<Vec<usize>>,
    /// For each building, adjacency count and shared wall length.
    pub stats: Vec<crate::geom::AdjacencyStats>,
}

impl AdjacencyGraph {
    pub fn compute(buildings: &[BuildingRecord], index: &SpatialIndex) -> AdjacencyGraph {
        let mut neighbours = Vec::with_capacity(buildings.len());
        let mut stats = Vec::with_capacity(buildings.len());
        for (i, b) in buildings.iter().enumerate() {
            let cands: Vec<usize> = index
                .query_rect(b.polygon.bbox().expand(ADJACENCY_RANGE))
                .into_iter()
                .filter(|&j| j != i)
                .collect();
            let mut nb = Vec::new();
            let mut st = crate::geom::AdjacencyStats::default();
            for j in cands {
                let s = adjacency_stats(&b.polygon, [&buildings[j].polygon]);
                if s.count > 0 {
                    nb.push(j);
                    st.count += 1;
                    st.shared_wall_length += s.shared_wall_length;
                }
            }
            neighbours.push(nb);
            stats.push(st);
        }
        AdjacencyGraph { neighbours, stats }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Partitions buildings into blocks (connected components of the
/// shares-a-wall relation) and unions each block's footprints.
pub fn build_blocks(buildings: &[BuildingRecord]) -> Result<Vec<Block>> {
    let index = SpatialIndex::build(buildings.iter().map(|b| &b.polygon));
    let adj = AdjacencyGraph::compute(buildings, &index);
    blocks_from_adjacency(buildings, &adj)
}

fn components(n: usize, adj: &AdjacencyGraph) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, nb) in adj.neighbours.iter().enumerate() {
        for &j in nb {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

pub fn blocks_from_adjacency(buildings: &[BuildingRecord], adj: &AdjacencyGraph) -> Result<Vec<Block>> {
    components(buildings.len(), adj)
        .into_iter()
        .map(|members| {
            let polys: Vec<&Polygon> = members.iter().map(|&i| &buildings[i].polygon).collect();
            let merged_outline = merge_outlines(&polys).map_err(|e| {
                let ids: Vec<&str> = e.members.iter().map(|&k| buildings[members[k]].id.as_str()).collect();
                Error::InvalidGeometry(format!("block union failed ({}): {}", e.reason, ids.join(", ")))
            })?;
            Ok(Block {
                member_ids: members.iter().map(|&i| buildings[i].id.clone()).collect(),
                members,
                merged_outline,
            })
        })
        .collect()
}

/// Buildings whose footprints prevent their block from being unioned
/// (coinciding walls, overlaps), as indices into `buildings`.
pub fn block_conflicts(buildings: &[BuildingRecord], index: &SpatialIndex) -> Vec<(usize, String)> {
    let adj = AdjacencyGraph::compute(buildings, index);
    let mut out = Vec::new();
    for members in components(buildings.len(), &adj) {
        let polys: Vec<&Polygon> = members.iter().map(|&i| &buildings[i].polygon).collect();
        if let Err(e) = merge_outlines(&polys) {
            out.extend(e.members.iter().map(|&k| (members[k], e.reason.clone())));
        }
    }
    out.sort_by_key(|c| c.0);
    out
}

/// The 69-dimensional node feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeatureVector(pub [f64; NUM_NODE_FEATURES]);

impl NodeFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn building_level(&self) -> &[f64] {
        &self.0[FeatureGroup::BuildingLevel.range()]
    }

    pub fn block_level(&self) -> &[f64] {
        &self.0[FeatureGroup::BlockLevel.range()]
    }

    pub fn land_use_onehot(&self) -> &[f64] {
        &self.0[FeatureGroup::LandUse.range()]
    }

    pub fn degurba_onehot(&self) -> &[f64] {
        &self.0[FeatureGroup::Degurba.range()]
    }

    pub fn country_onehot(&self) -> &[f64] {
        &self.0[FeatureGroup::Country.range()]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Serialize for NodeFeatureVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for NodeFeatureVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let arr: [f64; NUM_NODE_FEATURES] = v.try_into().map_err(|v: Vec<f64>| {
            serde::de::Error::custom(format!("expected {NUM_NODE_FEATURES} features, got {}", v.len()))
        })?;
        Ok(NodeFeatureVector(arr))
    }
}

/// Block-level features shared by every member of a block.
pub fn block_features(block: &Block, buildings: &[BuildingRecord]) -> [f64; 10] {
    let areas: Vec<f64> = block.members.iter().map(|&i| footprint_area(&buildings[i].polygon)).collect();
    let n = areas.len() as f64;
    let mean = areas.iter().sum::<f64>() / n;
    let var = areas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let o = &block.merged_outline;
    [
        n,
        mean,
        var.sqrt(),
        o.area(),
        o.perimeter(),
        o.longest_axis_length(),
        o.elongation(),
        o.convexity(),
        o.orientation(),
        o.corners() as f64,
    ]
}

/// Assembles the feature vector of `b`. `neighbours` are the adjacency
/// candidates of `b` (buildings within [`ADJACENCY_RANGE`] of its bounding
/// box, excluding `b`).
pub fn node_features(
    b: &BuildingRecord,
    block: &Block,
    buildings: &[BuildingRecord],
    neighbours: &[&BuildingRecord],
    countries: &CountryList,
) -> NodeFeatureVector {
    let adj = adjacency_stats(&b.polygon, neighbours.iter().map(|n| &n.polygon));
    assemble(b, adj, &block_features(block, buildings), countries)
}

pub(crate) fn assemble(
    b: &BuildingRecord,
    adj: crate::geom::AdjacencyStats,
    block: &[f64; 10],
    countries: &CountryList,
) -> NodeFeatureVector {
    let p = &b.polygon;
    let mut v = [0.0; NUM_NODE_FEATURES];
    v[0] = footprint_area(p);
    v[1] = perimeter(p);
    v[2] = count_corners(p) as f64;
    v[3] = anisotropy_index(p);
    v[4] = longest_axis_length(p);
    v[5] = elongation(p);
    v[6] = convexity(p);
    v[7] = orientation(p);
    v[8] = adj.count as f64;
    v[9] = adj.shared_wall_length;
    v[10..20].copy_from_slice(block);
    let lu = FeatureGroup::LandUse.range().start;
    if let Some(k) = b.land_use {
        v[lu + k] = 1.0;
    }
    if b.urban_atlas_covered {
        v[lu + NUM_LAND_USE] = 1.0;
    }
    if let Some(d) = b.degurba {
        v[FeatureGroup::Degurba.range().start + d.index()] = 1.0;
    }
    if let Some(c) = countries.index_of(&b.country) {
        v[FeatureGroup::Country.range().start + c] = 1.0;
    }
    NodeFeatureVector(v)
}

/// Feature vectors for every building, computed in one pass with a shared
/// spatial index and block partition.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub vectors: Vec<NodeFeatureVector>,
    /// Block index of every building.
    pub block_of: Vec<usize>,
    pub blocks: Vec<Block>,
}

impl FeatureTable {
    pub fn compute(buildings: &[BuildingRecord], index: &SpatialIndex, countries: &CountryList) -> Result<FeatureTable> {
        let adj = AdjacencyGraph::compute(buildings, index);
        let blocks = blocks_from_adjacency(buildings, &adj)?;
        let mut block_of = vec![0usize; buildings.len()];
        let mut block_vals = Vec::with_capacity(blocks.len());
        for (k, blk) in blocks.iter().enumerate() {
            for &m in &blk.members {
                block_of[m] = k;
            }
            block_vals.push(block_features(blk, buildings));
        }
        let vectors = buildings
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let v = assemble(b, adj.stats[i], &block_vals[block_of[i]], countries);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::InvalidGeometry(format!("building {}: non-finite features", b.id)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable { vectors, block_of, blocks })
    }
}

/// Inverse min-max scaling of an edge length: `1 - len/ξ` up to `ξ`, then 0.
pub fn scale_edge_feature(len_m: f64, xi: f64) -> Result<f64> {
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::InvalidConfig(format!("edge scaling threshold must be positive, got {xi}")));
    }
    if !(len_m >= 0.0) {
        return Err(Error::InvalidInput(format!("edge length must be non-negative, got {len_m}")));
    }
    Ok(if len_m <= xi { 1.0 - len_m / xi } else { 0.0 })
}

#[cfg(test)]
mod tests;
