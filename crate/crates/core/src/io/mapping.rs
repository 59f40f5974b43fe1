use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::classes::{building_class_id, land_use_id, NUM_LAND_USE};
use crate::error::{Error, Result};

pub const DEFAULT_TAG_TABLE: &str = include_str!("../../data/osm_tags.csv");
pub const DEFAULT_LAND_USE_TABLE: &str = include_str!("../../data/land_use_codes.csv");

/// Land-use layer a code comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LandUseSource {
    UrbanAtlas,
    Corine,
}

impl FromStr for LandUseSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "ua" | "urban_atlas" => Ok(LandUseSource::UrbanAtlas),
            "clc" | "corine" => Ok(LandUseSource::Corine),
            other => Err(Error::Data(format!("unknown land-use source '{other}'"))),
        }
    }
}

impl fmt::Display for LandUseSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LandUseSource::UrbanAtlas => "ua",
            LandUseSource::Corine => "clc",
        })
    }
}

/// Outcome of looking up a building tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagClass {
    Class(usize),
    NotAssigned,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MappingTables {
    /// `(building tag, house refinement)`; an empty refinement matches any.
    tags: BTreeMap<(String, String), Option<usize>>,
    land_use: BTreeMap<(LandUseSource, String), usize>,
}

#[derive(Deserialize)]
struct TagRow {
    tag: String,
    #[serde(default)]
    house: String,
    class: String,
}

#[derive(Deserialize)]
struct LandUseRow {
    source: String,
    code: String,
    class: String,
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

impl MappingTables {
    pub fn from_csv(tag_csv: &str, land_use_csv: &str) -> Result<MappingTables> {
        let mut t = MappingTables::default();
        for row in csv::Reader::from_reader(tag_csv.as_bytes()).deserialize::<TagRow>() {
            let row = row.map_err(csv_err)?;
            let class = match row.class.trim() {
                "not_assigned" => None,
                name => Some(
                    building_class_id(name).ok_or_else(|| Error::Data(format!("unknown building class '{name}'")))?,
                ),
            };
            t.tags.insert((row.tag.trim().to_string(), row.house.trim().to_string()), class);
        }
        for row in csv::Reader::from_reader(land_use_csv.as_bytes()).deserialize::<LandUseRow>() {
            let row = row.map_err(csv_err)?;
            let source: LandUseSource = row.source.parse()?;
            let class = land_use_id(row.class.trim())
                .ok_or_else(|| Error::Data(format!("unknown land-use class '{}'", row.class)))?;
            t.land_use.insert((source, row.code.trim().to_string()), class);
        }
        Ok(t)
    }

    pub fn load(tag_path: &Path, land_use_path: &Path) -> Result<MappingTables> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        MappingTables::from_csv(&read(tag_path)?, &read(land_use_path)?)
    }

    pub fn building_class(&self, tag: &str, house: Option<&str>) -> TagClass {
        let tag = tag.trim();
        let refined = house.and_then(|h| self.tags.get(&(tag.to_string(), h.trim().to_string())));
        match refined.or_else(|| self.tags.get(&(tag.to_string(), String::new()))) {
            Some(Some(c)) => TagClass::Class(*c),
            Some(None) => TagClass::NotAssigned,
            None => TagClass::Unknown,
        }
    }

    pub fn land_use(&self, source: LandUseSource, code: &str) -> Option<usize> {
        self.land_use.get(&(source, code.trim().to_string())).copied()
    }

    /// Land-use classes reachable from each source (used by self-checks).
    pub fn land_use_classes(&self, source: LandUseSource) -> Vec<usize> {
        let mut v: Vec<usize> = self.land_use.iter().filter(|((s, _), _)| *s == source).map(|(_, &c)| c).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Alphabetically first unrefined tag mapping to `class`.
    pub fn canonical_tag(&self, class: usize) -> Option<&str> {
        self.tags
            .iter()
            .find(|((_, h), c)| h.is_empty() && **c == Some(class))
            .map(|((t, _), _)| t.as_str())
    }

    pub fn check_complete(&self) -> Result<()> {
        for c in 0..crate::classes::NUM_BUILDING_CLASSES {
            if self.canonical_tag(c).is_none() {
                return Err(Error::Data(format!("no tag maps to class {c}")));
            }
        }
        let ua = self.land_use_classes(LandUseSource::UrbanAtlas);
        if ua.len() != NUM_LAND_USE {
            return Err(Error::Data("urban atlas codes do not cover all land-use classes".into()));
        }
        Ok(())
    }
}

impl MappingTables {
    pub fn defaults() -> MappingTables {
        MappingTables::from_csv(DEFAULT_TAG_TABLE, DEFAULT_LAND_USE_TABLE).expect("bundled tables parse")
    }
}
