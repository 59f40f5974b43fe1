//! Synthetic zoned towns.
//!
//! The town is a grid of 100 m cells grouped into 3×3-cell districts. Every
//! cell is a zone with a dominant building class; lots inside the cell hold
//! the dominant class with probability `purity` and a companion class
//! otherwise. Zones of the same family (rural, low-density residential,
//! dense residential, centre, industrial) are laid out contiguously, so
//! land-use and urbanization layers, which are drawn per district and per
//! 2×2 districts, reveal the family but not the zone.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::geojson::{write_feature_collection, IngestConfig};
use super::mapping::{LandUseSource, MappingTables};
use crate::classes::{Degurba, BUILDING_CLASS_NAMES, DEFAULT_COUNTRIES, NUM_BUILDING_CLASSES};
use crate::error::{Error, Result};
use crate::feature::BuildingRecord;
use crate::geom::{Point, Polygon};

const APARTMENTS: usize = 0;
const DETACHED: usize = 1;
const SEMI: usize = 2;
const TERRACED: usize = 3;
const INDUSTRIAL: usize = 4;
const COMMERCIAL: usize = 5;
const PUBLIC: usize = 6;
const AGRICULTURAL: usize = 7;
const OTHER: usize = 8;

const CELL: f64 = 100.0;
const STREET: f64 = 4.0;
const DISTRICT_CELLS: usize = 3;
const ORIGIN: Point = Point { x: 4_321_000.0, y: 3_210_000.0 };
pub const SYNTH_CRS: &str = "EPSG:3035";

/// Tag written for each class; unlabeled buildings are tagged `yes`.
const TAGS: [&str; NUM_BUILDING_CLASSES] =
    ["apartments", "detached", "semidetached_house", "terrace", "industrial", "commercial", "public", "barn", "garage"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Family {
    Rural,
    Low,
    Dense,
    Centre,
    Industrial,
}

impl Family {
    fn of(zone: usize) -> Family {
        match zone {
            AGRICULTURAL => Family::Rural,
            DETACHED | SEMI => Family::Low,
            TERRACED | APARTMENTS => Family::Dense,
            COMMERCIAL | PUBLIC => Family::Centre,
            _ => Family::Industrial,
        }
    }

    fn urban_atlas_code(self) -> &'static str {
        match self {
            Family::Rural => "21000",
            Family::Low => "11230",
            Family::Dense => "11210",
            Family::Centre => "11100",
            Family::Industrial => "12100",
        }
    }

    fn corine_code(self) -> &'static str {
        match self {
            Family::Rural => "211",
            Family::Low | Family::Dense => "112",
            Family::Centre => "111",
            Family::Industrial => "121",
        }
    }

    fn degurba(self) -> Degurba {
        match self {
            Family::Centre | Family::Dense => Degurba::City,
            Family::Low | Family::Industrial => Degurba::TownSuburb,
            Family::Rural => Degurba::Rural,
        }
    }
}

/// Lot grid, lot occupancy, rough buildings per cell and companion classes
/// of a zone.
struct ZoneSpec {
    lots: (usize, usize),
    occupancy: f64,
    per_cell: f64,
    companions: &'static [(usize, f64)],
}

fn zone_spec(zone: usize) -> ZoneSpec {
    let (lots, occupancy, per_cell, companions): ((usize, usize), f64, f64, &'static [(usize, f64)]) = match zone {
        APARTMENTS => ((2, 3), 1.0, 9.0, &[(COMMERCIAL, 0.4), (PUBLIC, 0.3), (TERRACED, 0.2), (OTHER, 0.1)]),
        DETACHED => ((4, 4), 0.9, 19.0, &[(SEMI, 0.5), (TERRACED, 0.2), (APARTMENTS, 0.1), (PUBLIC, 0.1), (COMMERCIAL, 0.1)]),
        SEMI => ((4, 4), 1.0, 28.0, &[(DETACHED, 0.5), (TERRACED, 0.4), (APARTMENTS, 0.1)]),
        TERRACED => ((2, 5), 1.0, 38.0, &[(SEMI, 0.4), (APARTMENTS, 0.3), (COMMERCIAL, 0.2), (DETACHED, 0.1)]),
        INDUSTRIAL => ((2, 2), 1.0, 4.5, &[(COMMERCIAL, 0.4), (OTHER, 0.4), (AGRICULTURAL, 0.2)]),
        COMMERCIAL => ((2, 3), 1.0, 7.0, &[(APARTMENTS, 0.4), (PUBLIC, 0.3), (INDUSTRIAL, 0.2), (OTHER, 0.1)]),
        PUBLIC => ((2, 2), 1.0, 4.2, &[(APARTMENTS, 0.4), (COMMERCIAL, 0.4), (DETACHED, 0.2)]),
        AGRICULTURAL => ((2, 2), 0.6, 2.6, &[(DETACHED, 0.5), (OTHER, 0.3), (INDUSTRIAL, 0.2)]),
        _ => ((4, 4), 1.0, 16.0, &[(DETACHED, 0.4), (INDUSTRIAL, 0.3), (SEMI, 0.3)]),
    };
    ZoneSpec { lots, occupancy, per_cell, companions }
}

/// Width range, depth range and L-shape probability of a class.
fn class_shape(class: usize) -> ((f64, f64), (f64, f64), f64) {
    match class {
        APARTMENTS => ((11.0, 16.0), (18.0, 40.0), 0.0),
        DETACHED => ((8.0, 12.0), (9.0, 14.0), 0.3),
        SEMI => ((6.0, 8.0), (9.0, 12.0), 0.0),
        TERRACED => ((5.0, 6.5), (8.0, 11.0), 0.0),
        INDUSTRIAL => ((20.0, 38.0), (28.0, 44.0), 0.2),
        COMMERCIAL => ((12.0, 24.0), (15.0, 36.0), 0.2),
        PUBLIC => ((14.0, 26.0), (18.0, 38.0), 0.5),
        AGRICULTURAL => ((10.0, 18.0), (18.0, 36.0), 0.0),
        _ => ((3.0, 6.0), (4.0, 8.0), 0.0),
    }
}

fn unit_count(class: usize, rng: &mut ChaCha8Rng) -> usize {
    match class {
        SEMI => 2,
        TERRACED => rng.gen_range(3..=6),
        APARTMENTS => match rng.gen::<f64>() {
            u if u < 0.6 => 1,
            u if u < 0.9 => 2,
            _ => 3,
        },
        COMMERCIAL => 1 + usize::from(rng.gen_bool(0.2)),
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_buildings: usize,
    /// Relative share of each building class, in class-id order.
    pub class_mix: [f64; NUM_BUILDING_CLASSES],
    /// Probability that an observed label is replaced by another class.
    pub noise: f64,
    /// Share of buildings carrying no usable tag.
    pub unlabeled: f64,
    /// Probability that a lot holds its zone's dominant class.
    pub purity: f64,
    /// Standard deviation of the log size factor.
    pub shape_noise: f64,
    /// Share of urban districts covered by the urban atlas layer.
    pub urban_atlas_coverage: f64,
    pub countries: Vec<String>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            n_buildings: 2000,
            class_mix: [0.12, 0.30, 0.10, 0.10, 0.08, 0.08, 0.07, 0.07, 0.08],
            noise: 0.05,
            unlabeled: 0.2,
            purity: 0.75,
            shape_noise: 0.25,
            urban_atlas_coverage: 1.0,
            countries: vec!["de".into(), "fr".into(), "nl".into()],
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_buildings < 20 {
            return bad(format!("n_buildings must be at least 20, got {}", self.n_buildings));
        }
        if self.class_mix.iter().any(|w| !w.is_finite() || *w < 0.0) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return bad("class_mix must be non-negative with a positive sum".into());
        }
        for (name, v) in [("noise", self.noise), ("unlabeled", self.unlabeled)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        for (name, v) in [("purity", self.purity), ("urban_atlas_coverage", self.urban_atlas_coverage)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.shape_noise) {
            return bad(format!("shape_noise must be in [0, 1], got {}", self.shape_noise));
        }
        if self.countries.is_empty() {
            return bad("at least one country is required".into());
        }
        if let Some(c) = self.countries.iter().find(|c| !DEFAULT_COUNTRIES.contains(&c.as_str())) {
            return bad(format!("unknown country code '{c}'"));
        }
        Ok(())
    }

    fn active(&self, class: usize) -> bool {
        self.class_mix[class] > 0.0
    }
}

/// One lot's buildings; units are listed in row order.
struct Structure {
    units: Vec<(Polygon, usize)>,
    district: usize,
}

struct Layout {
    structures: Vec<Structure>,
    district_family: Vec<Option<Family>>,
    district_rect: Vec<(f64, f64, f64, f64)>,
    district_country: Vec<usize>,
    districts_x: usize,
    districts_y: usize,
}

/// A generated town: ingested-equivalent building records plus the layers
/// needed to write it out as input files.
#[derive(Debug, Clone)]
pub struct SynthTown {
    pub params: SynthParams,
    /// Buildings ordered by id, labels as observed (noisy, partly missing).
    pub buildings: Vec<BuildingRecord>,
    /// True class of each building.
    pub truth: Vec<usize>,
    tags: Vec<(String, Option<String>)>,
    urban_atlas: Vec<(Polygon, &'static str)>,
    corine: Vec<(Polygon, &'static str)>,
    degurba: Vec<(Polygon, Degurba)>,
}

fn round_cm(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn sample_class(weights: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(c, w) in weights {
        if u < w {
            return c;
        }
        u -= w;
    }
    weights[weights.len() - 1].0
}

/// Axis-aligned rectangle or L-shape (notch cut from one corner).
fn footprint(x0: f64, y0: f64, x1: f64, y1: f64, notch: Option<(usize, f64, f64)>) -> Polygon {
    let (x0, y0, x1, y1) = (round_cm(x0), round_cm(y0), round_cm(x1), round_cm(y1));
    let Some((corner, fx, fy)) = notch else {
        return Polygon::rect(x0, y0, x1, y1).expect("positive extent");
    };
    let nx = round_cm(x0 + (x1 - x0) * (1.0 - fx));
    let ny = round_cm(y0 + (y1 - y0) * (1.0 - fy));
    let mx = round_cm(x0 + (x1 - x0) * fx);
    let my = round_cm(y0 + (y1 - y0) * fy);
    let p = |x, y| Point::new(x, y);
    let ring = match corner {
        0 => vec![p(x0, y0), p(x1, y0), p(x1, ny), p(nx, ny), p(nx, y1), p(x0, y1)],
        1 => vec![p(x0, y0), p(x1, y0), p(x1, y1), p(mx, y1), p(mx, ny), p(x0, ny)],
        2 => vec![p(mx, y0), p(x1, y0), p(x1, y1), p(x0, y1), p(x0, my), p(mx, my)],
        _ => vec![p(x0, y0), p(nx, y0), p(nx, my), p(x1, my), p(x1, y1), p(x0, y1)],
    };
    Polygon::from_exterior(ring).expect("valid L-shape")
}

struct Generator<'a> {
    params: &'a SynthParams,
    rng: ChaCha8Rng,
    size: Normal<f64>,
}

impl Generator<'_> {
    /// Buildings of `class` placed inside the lot `(x0, y0)-(x1, y1)`.
    fn structure(&mut self, class: usize, lot: (f64, f64, f64, f64), scale: f64) -> Vec<(Polygon, usize)> {
        let rng = &mut self.rng;
        let ((w0, w1), (h0, h1), p_l) = class_shape(class);
        let s = self.size.sample(rng).exp() * scale;
        let mut w = rng.gen_range(w0..w1) * s;
        let mut h = rng.gen_range(h0..h1) * s;
        let mut units = unit_count(class, rng);
        let transpose = rng.gen_bool(0.5);
        let (ax, ay) = (lot.2 - lot.0, lot.3 - lot.1);
        let (avail_w, avail_h) = if transpose { (ay, ax) } else { (ax, ay) };
        while units > 1 && w * units as f64 > avail_w {
            units -= 1;
        }
        w = w.min(avail_w / units as f64).max(2.0);
        h = h.min(avail_h).max(2.0);
        let (ext_w, ext_h) = (w * units as f64, h);
        let off_w = rng.gen_range(0.0..=(avail_w - ext_w).max(0.0));
        let off_h = rng.gen_range(0.0..=(avail_h - ext_h).max(0.0));
        let notch = (units == 1 && rng.gen_bool(p_l))
            .then(|| (rng.gen_range(0..4), rng.gen_range(0.3..0.5), rng.gen_range(0.3..0.5)));
        (0..units)
            .map(|k| {
                let a0 = off_w + w * k as f64;
                let a1 = a0 + w;
                let (x0, y0, x1, y1) = if transpose {
                    (lot.0 + off_h, lot.1 + a0, lot.0 + off_h + h, lot.1 + a1)
                } else {
                    (lot.0 + a0, lot.1 + off_h, lot.0 + a1, lot.1 + off_h + h)
                };
                (footprint(x0, y0, x1, y1, notch), class)
            })
            .collect()
    }

    fn zone_types(&mut self, n_cells: usize) -> Vec<usize> {
        let p = self.params;
        let weights: Vec<f64> = (0..NUM_BUILDING_CLASSES).map(|z| p.class_mix[z] / zone_spec(z).per_cell).collect();
        let total: f64 = weights.iter().sum();
        let mut counts: Vec<usize> = weights.iter().map(|w| (w / total * n_cells as f64).floor() as usize).collect();
        // Hand out remaining cells by largest remainder.
        let mut rest: Vec<(f64, usize)> =
            weights.iter().enumerate().map(|(z, w)| (w / total * n_cells as f64 - counts[z] as f64, z)).collect();
        rest.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = n_cells - counts.iter().sum::<usize>();
        for &(_, z) in rest.iter().filter(|r| weights[r.1] > 0.0).cycle().take(missing) {
            counts[z] += 1;
        }
        let mut by_family: BTreeMap<Family, Vec<Vec<usize>>> = BTreeMap::new();
        for (z, &n) in counts.iter().enumerate() {
            let mut left = n;
            while left > 0 {
                let run = self.rng.gen_range(1..=4).min(left);
                by_family.entry(Family::of(z)).or_default().push(vec![z; run]);
                left -= run;
            }
        }
        let mut zones = Vec::with_capacity(n_cells);
        for (_, mut runs) in by_family {
            runs.shuffle(&mut self.rng);
            zones.extend(runs.into_iter().flatten());
        }
        zones
    }

    fn layout(&mut self, n_cells: usize) -> Layout {
        let p = self.params;
        let zones = self.zone_types(n_cells);
        let per_district = DISTRICT_CELLS * DISTRICT_CELLS;
        let n_districts = n_cells.div_ceil(per_district);
        let districts_x = (n_districts as f64).sqrt().ceil() as usize;
        let districts_y = n_districts.div_ceil(districts_x);
        let mut structures = Vec::new();
        let mut district_zones: Vec<Vec<usize>> = vec![Vec::new(); districts_x * districts_y];
        let mut district_rect = Vec::new();
        let mut district_country = Vec::new();
        let dsize = CELL * DISTRICT_CELLS as f64;
        for d in 0..districts_x * districts_y {
            let (row, k) = (d / districts_x, d % districts_x);
            let col = if row % 2 == 0 { k } else { districts_x - 1 - k };
            let (x0, y0) = (ORIGIN.x + col as f64 * dsize, ORIGIN.y + row as f64 * dsize);
            district_rect.push((x0, y0, x0 + dsize, y0 + dsize));
            district_country.push(col * p.countries.len() / districts_x);
        }
        for (c, &zone) in zones.iter().enumerate() {
            let d = c / per_district;
            let local = c % per_district;
            let (r, k) = (local / DISTRICT_CELLS, local % DISTRICT_CELLS);
            let k = if r % 2 == 0 { k } else { DISTRICT_CELLS - 1 - k };
            let (dx0, dy0, _, _) = district_rect[d];
            let (cx, cy) = (dx0 + k as f64 * CELL, dy0 + r as f64 * CELL);
            district_zones[d].push(zone);
            let spec = zone_spec(zone);
            let companions: Vec<(usize, f64)> =
                spec.companions.iter().copied().filter(|&(c, _)| p.active(c)).collect();
            let scale = [1.0, 1.12, 0.9][district_country[d] % 3];
            let (nx, ny) = spec.lots;
            let (lw, lh) = ((CELL - 2.0 * STREET) / nx as f64, (CELL - 2.0 * STREET) / ny as f64);
            for i in 0..nx {
                for j in 0..ny {
                    if !self.rng.gen_bool(spec.occupancy) {
                        continue;
                    }
                    let lot = (
                        cx + STREET + i as f64 * lw + 1.0,
                        cy + STREET + j as f64 * lh + 1.0,
                        cx + STREET + (i + 1) as f64 * lw - 1.0,
                        cy + STREET + (j + 1) as f64 * lh - 1.0,
                    );
                    let class = if companions.is_empty() || self.rng.gen_bool(p.purity) {
                        zone
                    } else {
                        sample_class(&companions, &mut self.rng)
                    };
                    let units = self.structure(class, lot, scale);
                    let shed = matches!(class, DETACHED | SEMI) && p.active(OTHER) && self.rng.gen_bool(0.3);
                    let ext = units.iter().map(|u| u.0.bbox()).fold(None, |acc: Option<(f64, f64)>, b| {
                        Some(acc.map_or((b.max.x, b.max.y), |(x, y)| (x.max(b.max.x), y.max(b.max.y))))
                    });
                    structures.push(Structure { units, district: d });
                    if let (true, Some((ex, ey))) = (shed, ext) {
                        let shed_lot = if lot.2 - ex >= 5.5 {
                            Some((ex + 1.5, lot.1, lot.2, lot.3))
                        } else if lot.3 - ey >= 5.5 {
                            Some((lot.0, ey + 1.5, lot.2, lot.3))
                        } else {
                            None
                        };
                        if let Some(sl) = shed_lot {
                            let units = self.structure(OTHER, sl, 1.0);
                            structures.push(Structure { units, district: d });
                        }
                    }
                }
            }
        }
        let district_family = district_zones
            .iter()
            .map(|zs| {
                let mut tally: BTreeMap<Family, usize> = BTreeMap::new();
                for &z in zs {
                    *tally.entry(Family::of(z)).or_default() += 1;
                }
                tally.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|t| t.0)
            })
            .collect();
        Layout { structures, district_family, district_rect, district_country, districts_x, districts_y }
    }
}

/// Most frequent family among the given districts, ties to the lower family.
fn majority(families: impl Iterator<Item = Family>) -> Option<Family> {
    let mut tally: BTreeMap<Family, usize> = BTreeMap::new();
    for f in families {
        *tally.entry(f).or_default() += 1;
    }
    tally.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|t| t.0)
}

pub fn synth_town(params: &SynthParams) -> Result<SynthTown> {
    params.validate()?;
    let tables = MappingTables::defaults();
    let expected: f64 = {
        let w: Vec<f64> = (0..NUM_BUILDING_CLASSES).map(|z| params.class_mix[z] / zone_spec(z).per_cell).collect();
        let t: f64 = w.iter().sum();
        w.iter().enumerate().map(|(z, wz)| wz / t * zone_spec(z).per_cell).sum()
    };
    let mut slack = 1.15;
    let (mut gen, mut layout) = loop {
        let n_cells = ((params.n_buildings as f64 / expected * slack).ceil() as usize).max(1);
        let mut gen = Generator {
            params,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            size: Normal::new(0.0, params.shape_noise).expect("validated"),
        };
        let layout = gen.layout(n_cells);
        if layout.structures.iter().map(|s| s.units.len()).sum::<usize>() >= params.n_buildings {
            break (gen, layout);
        }
        slack *= 1.3;
    };

    // Trim whole structures (or the tail of a row) until the count matches.
    let mut excess = layout.structures.iter().map(|s| s.units.len()).sum::<usize>() - params.n_buildings;
    while excess > 0 {
        let k = gen.rng.gen_range(0..layout.structures.len());
        let s = &mut layout.structures[k];
        let cut = s.units.len().min(excess);
        s.units.truncate(s.units.len() - cut);
        excess -= cut;
    }

    let rng = &mut gen.rng;
    let mut urban_atlas = Vec::new();
    let mut ua_covered = vec![false; layout.district_family.len()];
    for (d, fam) in layout.district_family.iter().enumerate() {
        let Some(fam) = fam else { continue };
        if *fam != Family::Rural && rng.gen_bool(params.urban_atlas_coverage) {
            ua_covered[d] = true;
            let (x0, y0, x1, y1) = layout.district_rect[d];
            urban_atlas.push((Polygon::rect(x0, y0, x1, y1)?, fam.urban_atlas_code()));
        }
    }
    // CORINE and DEGURBA units span 2×2 districts.
    let mut corine = Vec::new();
    let mut degurba = Vec::new();
    let mut coarse_of = vec![(None, None); layout.district_family.len()];
    let locate = |d: usize| {
        let (x0, y0, _, _) = layout.district_rect[d];
        let dsize = CELL * DISTRICT_CELLS as f64;
        (((x0 - ORIGIN.x) / dsize).round() as usize, ((y0 - ORIGIN.y) / dsize).round() as usize)
    };
    let grid: BTreeMap<(usize, usize), usize> = (0..layout.district_family.len()).map(|d| (locate(d), d)).collect();
    for by in (0..layout.districts_y).step_by(2) {
        for bx in (0..layout.districts_x).step_by(2) {
            let members: Vec<usize> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .filter_map(|(i, j)| grid.get(&(bx + i, by + j)).copied())
                .collect();
            let Some(fam) = majority(members.iter().filter_map(|&d| layout.district_family[d])) else { continue };
            let dsize = CELL * DISTRICT_CELLS as f64;
            let x0 = ORIGIN.x + bx as f64 * dsize;
            let y0 = ORIGIN.y + by as f64 * dsize;
            let x1 = ORIGIN.x + ((bx + 2).min(layout.districts_x)) as f64 * dsize;
            let y1 = ORIGIN.y + ((by + 2).min(layout.districts_y)) as f64 * dsize;
            let rect = Polygon::rect(x0, y0, x1, y1)?;
            corine.push((rect.clone(), fam.corine_code()));
            degurba.push((rect, fam.degurba()));
            for &d in &members {
                coarse_of[d] = (Some(fam.corine_code()), Some(fam.degurba()));
            }
        }
    }

    let active: Vec<usize> = (0..NUM_BUILDING_CLASSES).filter(|&c| params.active(c)).collect();
    let mut buildings = Vec::with_capacity(params.n_buildings);
    let mut truth = Vec::with_capacity(params.n_buildings);
    let mut tags = Vec::with_capacity(params.n_buildings);
    for s in &layout.structures {
        for (poly, class) in &s.units {
            let id = format!("b{:07}", buildings.len() + 1);
            let mut b = BuildingRecord::new(id, poly.clone());
            let observed = if rng.gen_bool(params.unlabeled) {
                None
            } else if active.len() > 1 && rng.gen_bool(params.noise) {
                let others: Vec<usize> = active.iter().copied().filter(|c| c != class).collect();
                Some(*others.choose(rng).expect("two or more active classes"))
            } else {
                Some(*class)
            };
            let (tag, house) = match observed {
                None => ("yes".to_string(), None),
                Some(TERRACED) if rng.gen_bool(0.5) => ("house".to_string(), Some("terraced".to_string())),
                Some(c) => (TAGS[c].to_string(), None),
            };
            b.class_label = observed;
            b.raw_class = Some(match &house {
                Some(h) => format!("{tag};house={h}"),
                None => tag.clone(),
            });
            let d = s.district;
            b.country = params.countries[layout.district_country[d]].clone();
            let (clc, deg) = coarse_of[d];
            b.urban_atlas_covered = ua_covered[d];
            b.land_use = if ua_covered[d] {
                let fam = layout.district_family[d].expect("covered districts have a family");
                tables.land_use(LandUseSource::UrbanAtlas, fam.urban_atlas_code())
            } else {
                clc.and_then(|code| tables.land_use(LandUseSource::Corine, code))
            };
            b.degurba = deg;
            buildings.push(b);
            truth.push(*class);
            tags.push((tag, house));
        }
    }
    Ok(SynthTown { params: params.clone(), buildings, truth, tags, urban_atlas, corine, degurba })
}

impl SynthTown {
    /// Writes footprints, land-use, DEGURBA layers and the ground truth to
    /// `dir`, returning an ingestion config that reads them back.
    pub fn write(&self, dir: &Path) -> Result<IngestConfig> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let footprints: Vec<(String, Polygon, Map<String, Value>)> = self
            .buildings
            .iter()
            .zip(&self.tags)
            .map(|(b, (tag, house))| {
                let mut props = Map::new();
                props.insert("building".into(), Value::String(tag.clone()));
                if let Some(h) = house {
                    props.insert("house".into(), Value::String(h.clone()));
                }
                props.insert("country".into(), Value::String(b.country.clone()));
                (b.id.clone(), b.polygon.clone(), props)
            })
            .collect();
        let zones = |layer: &[(Polygon, &str)], source: &str, prefix: &str| -> Vec<(String, Polygon, Map<String, Value>)> {
            layer
                .iter()
                .enumerate()
                .map(|(k, (p, code))| {
                    let mut props = Map::new();
                    props.insert("code".into(), Value::String(code.to_string()));
                    props.insert("source".into(), Value::String(source.into()));
                    (format!("{prefix}{k}"), p.clone(), props)
                })
                .collect()
        };
        let degurba: Vec<(String, Polygon, Map<String, Value>)> = self
            .degurba
            .iter()
            .enumerate()
            .map(|(k, (p, d))| {
                let mut props = Map::new();
                props.insert("degurba".into(), Value::from(d.code()));
                (format!("dg{k}"), p.clone(), props)
            })
            .collect();
        let mut cfg = IngestConfig::new(dir.join("footprints.geojson"));
        cfg.land_use = vec![dir.join("land_use_ua.geojson"), dir.join("land_use_clc.geojson")];
        cfg.degurba = Some(dir.join("degurba.geojson"));
        cfg.crs = SYNTH_CRS.into();
        write_feature_collection(&cfg.footprints, SYNTH_CRS, &footprints)?;
        write_feature_collection(&cfg.land_use[0], SYNTH_CRS, &zones(&self.urban_atlas, "ua", "ua"))?;
        write_feature_collection(&cfg.land_use[1], SYNTH_CRS, &zones(&self.corine, "clc", "clc"))?;
        write_feature_collection(cfg.degurba.as_ref().expect("set above"), SYNTH_CRS, &degurba)?;

        let truth_path = dir.join("ground_truth.csv");
        let mut w = csv::Writer::from_path(&truth_path).map_err(|e| Error::Data(e.to_string()))?;
        w.write_record(["id", "true_class", "observed_class"]).map_err(|e| Error::Data(e.to_string()))?;
        for (b, &t) in self.buildings.iter().zip(&self.truth) {
            let obs = b.class_label.map_or("", |c| BUILDING_CLASS_NAMES[c]);
            w.write_record([b.id.as_str(), BUILDING_CLASS_NAMES[t], obs]).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&truth_path, e))?;
        Ok(cfg)
    }
}
