//! Class vocabularies: building classes, classification tasks, land-use
//! classes and degree-of-urbanization categories.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The nine combined building type/function classes.
pub const BUILDING_CLASS_NAMES: [&str; 9] = [
    "apartments",
    "detached",
    "semi_detached",
    "terraced",
    "industrial",
    "commercial",
    "public",
    "agricultural",
    "other",
];

pub const NUM_BUILDING_CLASSES: usize = 9;

/// Number of residential classes; they occupy ids `0..4`.
pub const NUM_RESIDENTIAL: usize = 4;

pub fn building_class_name(id: usize) -> Option<&'static str> {
    BUILDING_CLASS_NAMES.get(id).copied()
}

pub fn building_class_id(name: &str) -> Option<usize> {
    BUILDING_CLASS_NAMES.iter().position(|n| *n == name)
}

/// Classification task; labels are always stored in the nine-class space
/// and remapped on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Combined9,
    Typology5,
    Binary2,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Combined9, Task::Typology5, Task::Binary2];

    pub fn num_classes(self) -> usize {
        match self {
            Task::Combined9 => 9,
            Task::Typology5 => 5,
            Task::Binary2 => 2,
        }
    }

    /// Maps a nine-class id into this task's label space.
    pub fn map_label(self, combined: usize) -> Result<usize, Error> {
        if combined >= NUM_BUILDING_CLASSES {
            return Err(Error::Data(format!("unknown building class id {combined}")));
        }
        Ok(match self {
            Task::Combined9 => combined,
            Task::Typology5 => combined.min(NUM_RESIDENTIAL),
            Task::Binary2 => usize::from(combined >= NUM_RESIDENTIAL),
        })
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::Combined9 => BUILDING_CLASS_NAMES.to_vec(),
            Task::Typology5 => vec![
                "apartments",
                "detached",
                "semi_detached",
                "terraced",
                "non_residential",
            ],
            Task::Binary2 => vec!["residential", "non_residential"],
        }
    }

    /// Column label used in the performance tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Task::Combined9 => "combined",
            Task::Typology5 => "typology",
            Task::Binary2 => "res./non res.",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Combined9 => "combined9",
            Task::Typology5 => "typology5",
            Task::Binary2 => "binary2",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "combined9" | "combined" => Ok(Task::Combined9),
            "typology5" | "typology" => Ok(Task::Typology5),
            "binary2" | "binary" => Ok(Task::Binary2),
            _ => Err(Error::InvalidConfig(format!("unknown task '{s}'"))),
        }
    }
}

/// The fifteen custom land-use classes, in feature-vector order.
pub const LAND_USE_NAMES: [&str; 15] = [
    "continuous_urban_fabric",
    "dense_medium_urban_fabric",
    "low_density_urban_fabric",
    "very_low_density_urban_fabric",
    "isolated_structures",
    "industrial_commercial_public_private",
    "transport",
    "mine_dump_construction",
    "artificial_vegetated",
    "agricultural",
    "forests",
    "shrub_herbaceous",
    "open_spaces",
    "wetlands",
    "water",
];

pub const NUM_LAND_USE: usize = 15;

pub fn land_use_id(name: &str) -> Option<usize> {
    LAND_USE_NAMES.iter().position(|n| *n == name)
}

/// Degree of urbanization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degurba {
    City,
    TownSuburb,
    Rural,
}

impl Degurba {
    pub const ALL: [Degurba; 3] = [Degurba::City, Degurba::TownSuburb, Degurba::Rural];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Decodes the 1/2/3 code used by DEGURBA layers.
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(Degurba::City),
            2 => Some(Degurba::TownSuburb),
            3 => Some(Degurba::Rural),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        self as i64 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Degurba::City => "city",
            Degurba::TownSuburb => "town_suburb",
            Degurba::Rural => "rural",
        }
    }
}

/// The 30 countries of the study area (EU27 + NO, CH, UK), sorted.
pub const DEFAULT_COUNTRIES: [&str; 30] = [
    "at", "be", "bg", "ch", "cy", "cz", "de", "dk", "ee", "es", "fi", "fr", "gr", "hr", "hu", "ie",
    "it", "lt", "lu", "lv", "mt", "nl", "no", "pl", "pt", "ro", "se", "si", "sk", "uk",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remap_partitions() {
        assert_eq!(Task::Typology5.map_label(4).unwrap(), 4);
        assert_eq!(Task::Typology5.map_label(8).unwrap(), 4);
        assert_eq!(Task::Typology5.map_label(2).unwrap(), 2);
        assert_eq!(Task::Binary2.map_label(3).unwrap(), 0);
        assert_eq!(Task::Binary2.map_label(4).unwrap(), 1);
        assert!(Task::Binary2.map_label(9).is_err());
    }

    #[test]
    fn country_list_is_sorted_and_complete() {
        let mut sorted = DEFAULT_COUNTRIES.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, DEFAULT_COUNTRIES.to_vec());
    }
}
