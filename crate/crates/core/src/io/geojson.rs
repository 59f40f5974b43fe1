//! GeoJSON feature collections: footprint ingestion with spatial joins
//! against land-use, urbanization and country layers, and writing.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::mapping::{LandUseSource, MappingTables, TagClass};
use crate::classes::Degurba;
use crate::error::{Error, Result};
use crate::feature::{block_conflicts, BuildingRecord};
use crate::geom::{footprint_area, Point, Polygon};
use crate::graphgen::SpatialIndex;

#[derive(Deserialize)]
struct FeatureCollection {
    #[serde(default)]
    crs: Option<Value>,
    features: Vec<Feature>,
}

#[derive(Deserialize)]
struct Feature {
    #[serde(default)]
    id: Option<Value>,
    geometry: Option<Geometry>,
    #[serde(default)]
    properties: Option<Map<String, Value>>,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum Geometry {
    Polygon { coordinates: Vec<Vec<Vec<f64>>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<Vec<f64>>>> },
    #[serde(other)]
    Other,
}

const GEOGRAPHIC_CRS: [&str; 5] = ["EPSG:4326", "EPSG:4258", "EPSG:4269", "OGC:CRS84", "CRS84"];

/// Normalizes `urn:ogc:def:crs:EPSG::3035` and similar to `EPSG:3035`.
pub fn normalize_crs(name: &str) -> String {
    let s = name.trim().to_uppercase();
    if let Some(rest) = s.strip_prefix("URN:OGC:DEF:CRS:") {
        let parts: Vec<&str> = rest.split(':').filter(|p| !p.is_empty()).collect();
        if parts.len() >= 2 {
            return format!("{}:{}", parts[0], parts[parts.len() - 1]);
        }
        return rest.to_string();
    }
    s
}

pub fn check_metric_crs(name: &str) -> Result<()> {
    let n = normalize_crs(name);
    if GEOGRAPHIC_CRS.contains(&n.as_str()) {
        return Err(Error::InvalidConfig(format!(
            "CRS {name} is geographic; reproject to a metric CRS (e.g. EPSG:3035) first"
        )));
    }
    Ok(())
}

fn declared_crs(fc: &FeatureCollection) -> Option<String> {
    fc.crs.as_ref()?.get("properties")?.get("name")?.as_str().map(normalize_crs)
}

fn read_collection(path: &Path, crs: &str) -> Result<FeatureCollection> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fc: FeatureCollection = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    if let Some(file_crs) = declared_crs(&fc) {
        if file_crs != normalize_crs(crs) {
            return Err(Error::InvalidConfig(format!(
                "{} declares CRS {file_crs}, expected {}",
                path.display(),
                normalize_crs(crs)
            )));
        }
    }
    Ok(fc)
}

fn ring(coords: &[Vec<f64>]) -> Result<Vec<Point>> {
    coords
        .iter()
        .map(|c| match c.as_slice() {
            [x, y, ..] => Ok(Point::new(*x, *y)),
            _ => Err(Error::InvalidGeometry("coordinate with fewer than 2 values".into())),
        })
        .collect()
}

fn polygon_of(rings: &[Vec<Vec<f64>>]) -> Result<Polygon> {
    let (ext, holes) = rings
        .split_first()
        .ok_or_else(|| Error::InvalidGeometry("polygon without rings".into()))?;
    Polygon::new(ring(ext)?, holes.iter().map(|h| ring(h)).collect::<Result<_>>()?)
}

/// Polygons of a geometry; multi-part geometries yield every valid part.
fn polygons_of(g: &Geometry) -> Result<Vec<Polygon>> {
    match g {
        Geometry::Polygon { coordinates } => Ok(vec![polygon_of(coordinates)?]),
        Geometry::MultiPolygon { coordinates } => coordinates.iter().map(|p| polygon_of(p)).collect(),
        Geometry::Other => Err(Error::InvalidGeometry("geometry is not a polygon".into())),
    }
}

fn prop_str(props: &Map<String, Value>, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// A polygon layer joined to points by containment.
struct ZoneLayer<T> {
    polygons: Vec<Polygon>,
    values: Vec<T>,
    index: SpatialIndex,
}

impl<T: Clone> ZoneLayer<T> {
    fn new(items: Vec<(Polygon, T)>) -> Self {
        let (polygons, values): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        let index = SpatialIndex::build(&polygons);
        ZoneLayer { polygons, values, index }
    }

    /// Value of the first (in file order) polygon containing `p`.
    fn lookup(&self, p: Point) -> Option<T> {
        let r = crate::geom::Rect { min: p, max: p };
        self.index
            .query_rect(r)
            .into_iter()
            .find(|&i| self.polygons[i].contains(p))
            .map(|i| self.values[i].clone())
    }
}

fn zone_layer<T: Clone>(
    path: &Path,
    crs: &str,
    mut value: impl FnMut(&Map<String, Value>) -> Result<Option<T>>,
) -> Result<ZoneLayer<T>> {
    let fc = read_collection(path, crs)?;
    let mut items = Vec::new();
    for (k, f) in fc.features.iter().enumerate() {
        let empty = Map::new();
        let props = f.properties.as_ref().unwrap_or(&empty);
        let Some(v) = value(props)? else { continue };
        let g = f
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{} feature {k}: missing geometry", path.display())))?;
        let polys = polygons_of(g).map_err(|e| Error::Data(format!("{} feature {k}: {e}", path.display())))?;
        items.extend(polys.into_iter().map(|p| (p, v.clone())));
    }
    Ok(ZoneLayer::new(items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub footprints: PathBuf,
    /// Land-use layers; each feature carries `code` and `source` (`ua`/`clc`).
    #[serde(default)]
    pub land_use: Vec<PathBuf>,
    #[serde(default)]
    pub degurba: Option<PathBuf>,
    /// Country polygons with a `country` property, used when a footprint
    /// lacks the country property.
    #[serde(default)]
    pub countries: Option<PathBuf>,
    pub country_property: String,
    #[serde(default)]
    pub tag_table: Option<PathBuf>,
    #[serde(default)]
    pub land_use_table: Option<PathBuf>,
    pub crs: String,
}

impl IngestConfig {
    pub fn new(footprints: impl Into<PathBuf>) -> Self {
        IngestConfig {
            footprints: footprints.into(),
            land_use: Vec::new(),
            degurba: None,
            countries: None,
            country_property: "country".into(),
            tag_table: None,
            land_use_table: None,
            crs: "EPSG:3035".into(),
        }
    }

    pub fn mapping(&self) -> Result<MappingTables> {
        let tables = match (&self.tag_table, &self.land_use_table) {
            (None, None) => MappingTables::defaults(),
            (tags, lu) => {
                let read = |p: &Option<PathBuf>, default: &str| -> Result<String> {
                    match p {
                        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e)),
                        None => Ok(default.to_string()),
                    }
                };
                MappingTables::from_csv(
                    &read(tags, super::mapping::DEFAULT_TAG_TABLE)?,
                    &read(lu, super::mapping::DEFAULT_LAND_USE_TABLE)?,
                )?
            }
        };
        tables.check_complete()?;
        Ok(tables)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub feature: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    /// Accepted buildings, ordered by id.
    pub buildings: Vec<BuildingRecord>,
    pub rejections: Vec<Rejection>,
    /// Building tags absent from the mapping table, with counts.
    pub unmapped_tags: BTreeMap<String, usize>,
}

pub fn ingest_footprints(cfg: &IngestConfig) -> Result<IngestOutput> {
    check_metric_crs(&cfg.crs)?;
    let tables = cfg.mapping()?;
    let fc = read_collection(&cfg.footprints, &cfg.crs)?;

    let mut land_use: Vec<ZoneLayer<(LandUseSource, usize)>> = Vec::new();
    for path in &cfg.land_use {
        land_use.push(zone_layer(path, &cfg.crs, |p| {
            let code = prop_str(p, "code").ok_or_else(|| Error::Data("land-use feature without code".into()))?;
            let source: LandUseSource = prop_str(p, "source").unwrap_or_else(|| "clc".into()).parse()?;
            Ok(tables.land_use(source, &code).map(|c| (source, c)))
        })?);
    }
    let degurba = match &cfg.degurba {
        Some(path) => Some(zone_layer(path, &cfg.crs, |p| {
            let code = p.get("degurba").and_then(Value::as_i64);
            Ok(code.and_then(Degurba::from_code))
        })?),
        None => None,
    };
    let countries = match &cfg.countries {
        Some(path) => Some(zone_layer(path, &cfg.crs, |p| Ok(prop_str(p, "country").map(|c| c.to_lowercase())))?),
        None => None,
    };

    let total = fc.features.len();
    let parsed: Vec<std::result::Result<(BuildingRecord, Option<String>), Rejection>> = fc
        .features
        .into_par_iter()
        .enumerate()
        .map(|(k, f)| {
            let props = f.properties.unwrap_or_default();
            let id = f
                .id
                .as_ref()
                .and_then(|v| match v {
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .or_else(|| prop_str(&props, "id"))
                .ok_or_else(|| Rejection { feature: format!("#{k}"), reason: "missing id".into() })?;
            let polygon = match f.geometry.as_ref().map(polygons_of) {
                None => Err(Error::InvalidGeometry("missing geometry".into())),
                Some(Err(e)) => Err(e),
                Some(Ok(mut parts)) => {
                    // Multi-part footprints keep their largest part.
                    parts.sort_by(|a, b| footprint_area(b).total_cmp(&footprint_area(a)));
                    Ok(parts.swap_remove(0))
                }
            };
            let polygon = polygon.map_err(|e| Rejection { feature: id.clone(), reason: e.to_string() })?;
            let mut b = BuildingRecord::new(id, polygon);
            let mut unmapped = None;
            if let Some(tag) = prop_str(&props, "building") {
                let house = prop_str(&props, "house");
                match tables.building_class(&tag, house.as_deref()) {
                    TagClass::Class(c) => b.class_label = Some(c),
                    TagClass::NotAssigned => {}
                    TagClass::Unknown => unmapped = Some(tag.clone()),
                }
                b.raw_class = Some(match house {
                    Some(h) => format!("{tag};house={h}"),
                    None => tag,
                });
            }
            let c = b.centroid;
            // Urban atlas wins over CORINE.
            let hits: Vec<_> = land_use.iter().filter_map(|l| l.lookup(c)).collect();
            let chosen = hits
                .iter()
                .find(|h| h.0 == LandUseSource::UrbanAtlas)
                .or(hits.first())
                .copied();
            b.land_use = chosen.map(|h| h.1);
            b.urban_atlas_covered = matches!(chosen, Some((LandUseSource::UrbanAtlas, _)));
            b.degurba = degurba.as_ref().and_then(|l| l.lookup(c));
            b.country = prop_str(&props, &cfg.country_property)
                .map(|s| s.to_lowercase())
                .or_else(|| countries.as_ref().and_then(|l| l.lookup(c)))
                .unwrap_or_default();
            Ok((b, unmapped))
        })
        .collect();

    let mut rejections = Vec::new();
    let mut unmapped_tags: BTreeMap<String, usize> = BTreeMap::new();
    let mut buildings = Vec::new();
    for r in parsed {
        match r {
            Ok((b, unmapped)) => {
                if let Some(tag) = unmapped {
                    *unmapped_tags.entry(tag).or_default() += 1;
                }
                buildings.push(b);
            }
            Err(rej) => rejections.push(rej),
        }
    }
    buildings.sort_by(|a, b| a.id.cmp(&b.id));
    let mut dup = HashSet::new();
    for w in buildings.windows(2) {
        if w[0].id == w[1].id {
            dup.insert(w[0].id.clone());
        }
    }
    if !dup.is_empty() {
        buildings.retain(|b| {
            if dup.contains(&b.id) {
                rejections.push(Rejection { feature: b.id.clone(), reason: "duplicate id".into() });
                false
            } else {
                true
            }
        });
    }
    // Footprints that cannot be unioned into a block (overlaps, coinciding
    // walls) are rejected; repeat until the remaining layer is consistent.
    for _ in 0..8 {
        let index = SpatialIndex::build(buildings.iter().map(|b| &b.polygon));
        let conflicts = block_conflicts(&buildings, &index);
        if conflicts.is_empty() {
            break;
        }
        let drop: HashSet<usize> = conflicts.iter().map(|c| c.0).collect();
        for (i, reason) in conflicts {
            rejections.push(Rejection { feature: buildings[i].id.clone(), reason: format!("block union: {reason}") });
        }
        let mut k = 0;
        buildings.retain(|_| {
            k += 1;
            !drop.contains(&(k - 1))
        });
    }
    rejections.sort_by(|a, b| a.feature.cmp(&b.feature).then(a.reason.cmp(&b.reason)));
    rejections.dedup();

    if total > 0 && rejections.len() * 2 > total {
        return Err(Error::Data(format!(
            "{} of {total} footprints rejected (more than half); first: {} ({})",
            rejections.len(),
            rejections[0].feature,
            rejections[0].reason
        )));
    }
    Ok(IngestOutput { buildings, rejections, unmapped_tags })
}

fn ring_coords(ring: &[Point]) -> Value {
    let mut pts: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    pts.push(json!([ring[0].x, ring[0].y]));
    Value::Array(pts)
}

pub fn polygon_geometry(p: &Polygon) -> Value {
    let rings: Vec<Value> = p.rings().map(ring_coords).collect();
    json!({ "type": "Polygon", "coordinates": rings })
}

/// Writes a feature collection of `(id, polygon, properties)` with a named CRS.
pub fn write_feature_collection(path: &Path, crs: &str, features: &[(String, Polygon, Map<String, Value>)]) -> Result<()> {
    let feats: Vec<Value> = features
        .iter()
        .map(|(id, poly, props)| {
            json!({ "type": "Feature", "id": id, "geometry": polygon_geometry(poly), "properties": props })
        })
        .collect();
    let fc = json!({
        "type": "FeatureCollection",
        "crs": { "type": "name", "properties": { "name": crs } },
        "features": feats,
    });
    let text = serde_json::to_string(&fc).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
