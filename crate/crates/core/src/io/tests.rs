use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::*;
use crate::classes::{building_class_id, land_use_id, Degurba};
use crate::error::Error;
use crate::feature::CountryList;
use crate::graphgen::{generate_dataset, BuildingStore, GenerationConfig, GraphDataset};

fn square(x: f64, y: f64, s: f64) -> Value {
    json!({ "type": "Polygon", "coordinates": [[[x, y], [x + s, y], [x + s, y + s], [x, y + s], [x, y]]] })
}

fn collection(features: Vec<Value>) -> Value {
    json!({
        "type": "FeatureCollection",
        "crs": { "type": "name", "properties": { "name": "urn:ogc:def:crs:EPSG::3035" } },
        "features": features,
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn building(id: &str, x: f64, y: f64, tag: &str) -> Value {
    json!({ "type": "Feature", "id": id, "geometry": square(x, y, 10.0),
            "properties": { "building": tag, "country": "DE" } })
}

#[test]
fn tag_mapping_examples() {
    let t = MappingTables::defaults();
    t.check_complete().unwrap();
    assert_eq!(t.building_class("semidetached_house", None), TagClass::Class(building_class_id("semi_detached").unwrap()));
    assert_eq!(t.building_class("cabin", None), TagClass::NotAssigned);
    assert_eq!(t.building_class("house", Some("terraced")), TagClass::Class(building_class_id("terraced").unwrap()));
    assert_eq!(t.building_class("house", None), TagClass::Unknown);
    assert_eq!(t.building_class("spaceport", None), TagClass::Unknown);
    let cuf = land_use_id("continuous_urban_fabric").unwrap();
    assert_eq!(t.land_use(LandUseSource::UrbanAtlas, "11100"), Some(cuf));
    assert_eq!(t.land_use(LandUseSource::Corine, "112"), land_use_id("dense_medium_urban_fabric"));
    assert_eq!(t.land_use(LandUseSource::Corine, "11100"), None);
}

fn sample_inputs(dir: &Path) -> IngestConfig {
    let footprints = collection(vec![
        building("a", 0.0, 0.0, "semidetached_house"),
        building("b", 100.0, 0.0, "cabin"),
        building("c", 300.0, 0.0, "spaceport"),
        json!({ "type": "Feature", "id": "d", "geometry": square(0.0, 100.0, 8.0),
                "properties": { "building": "house", "house": "terraced", "country": "de" } }),
        json!({ "type": "Feature", "id": 17, "geometry": square(500.0, 500.0, 12.0),
                "properties": { "building": "school" } }),
        json!({ "type": "Feature", "geometry": square(600.0, 0.0, 5.0), "properties": { "building": "yes" } }),
        json!({ "type": "Feature", "id": "bad", "geometry": { "type": "Polygon", "coordinates": [[[0.0, 0.0], [1.0, 1.0]]] },
                "properties": {} }),
        json!({ "type": "Feature", "id": "pt", "geometry": { "type": "Point", "coordinates": [0.0, 0.0] },
                "properties": {} }),
    ]);
    let ua = collection(vec![json!({ "type": "Feature", "geometry": square(-10.0, -10.0, 50.0),
                                     "properties": { "code": "11100", "source": "ua" } })]);
    let clc = collection(vec![json!({ "type": "Feature", "geometry": square(-50.0, -50.0, 250.0),
                                      "properties": { "code": 112, "source": "clc" } })]);
    let degurba = collection(vec![
        json!({ "type": "Feature", "geometry": square(-50.0, -50.0, 250.0), "properties": { "degurba": 1 } }),
        json!({ "type": "Feature", "geometry": square(400.0, 400.0, 200.0), "properties": { "degurba": 3 } }),
    ]);
    let countries = collection(vec![json!({ "type": "Feature", "geometry": square(400.0, 400.0, 200.0),
                                            "properties": { "country": "AT" } })]);
    let mut cfg = IngestConfig::new(write(dir, "fp.geojson", &footprints));
    cfg.land_use = vec![write(dir, "clc.geojson", &clc), write(dir, "ua.geojson", &ua)];
    cfg.degurba = Some(write(dir, "dg.geojson", &degurba));
    cfg.countries = Some(write(dir, "countries.geojson", &countries));
    cfg
}

#[test]
fn ingest_joins_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = ingest_footprints(&sample_inputs(dir.path())).unwrap();
    let ids: Vec<&str> = out.buildings.iter().map(|b| b.id.as_str()).collect();
    assert_eq!(ids, ["17", "a", "b", "c", "d"]);
    let by_id = |id: &str| out.buildings.iter().find(|b| b.id == id).unwrap();

    let a = by_id("a");
    assert_eq!(a.class_label, building_class_id("semi_detached"));
    assert_eq!(a.land_use, land_use_id("continuous_urban_fabric"));
    assert!(a.urban_atlas_covered);
    assert_eq!(a.degurba, Some(Degurba::City));
    assert_eq!(a.country, "de");

    let b = by_id("b");
    assert_eq!(b.class_label, None);
    assert_eq!(b.raw_class.as_deref(), Some("cabin"));
    assert_eq!(b.land_use, land_use_id("dense_medium_urban_fabric"));
    assert!(!b.urban_atlas_covered);

    assert_eq!(by_id("c").land_use, None);
    assert_eq!(by_id("c").class_label, None);
    assert_eq!(out.unmapped_tags.get("spaceport"), Some(&1));
    assert_eq!(out.unmapped_tags.get("yes"), None);

    let d = by_id("d");
    assert_eq!(d.class_label, building_class_id("terraced"));
    assert_eq!(d.raw_class.as_deref(), Some("house;house=terraced"));

    let s = by_id("17");
    assert_eq!(s.country, "at");
    assert_eq!(s.degurba, Some(Degurba::Rural));
    assert_eq!(s.class_label, building_class_id("public"));

    let rejected: Vec<&str> = out.rejections.iter().map(|r| r.feature.as_str()).collect();
    assert_eq!(rejected, ["#5", "bad", "pt"]);
}

#[test]
fn ingest_is_order_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample_inputs(dir.path());
    let reference = ingest_footprints(&cfg).unwrap().buildings;
    let text = std::fs::read_to_string(&cfg.footprints).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let feats = v["features"].as_array_mut().unwrap();
        // Keep the id-less feature first so its rejection label is stable.
        feats[1..].shuffle(&mut rng);
        write(dir.path(), "fp.geojson", &v);
        assert_eq!(ingest_footprints(&cfg).unwrap().buildings, reference);
    }
}

#[test]
fn ingest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sample_inputs(dir.path());
    cfg.crs = "EPSG:4326".into();
    assert!(matches!(ingest_footprints(&cfg), Err(Error::InvalidConfig(_))));
    cfg.crs = "EPSG:25832".into();
    let err = ingest_footprints(&cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(ref m) if m.contains("EPSG:3035")), "{err}");

    let mostly_bad = collection(vec![
        building("ok", 0.0, 0.0, "detached"),
        json!({ "type": "Feature", "id": "x", "geometry": null, "properties": {} }),
        json!({ "type": "Feature", "id": "y", "geometry": null, "properties": {} }),
    ]);
    let cfg = IngestConfig::new(write(dir.path(), "bad.geojson", &mostly_bad));
    assert!(matches!(ingest_footprints(&cfg), Err(Error::Data(_))));

    let cfg = IngestConfig::new(dir.path().join("missing.geojson"));
    assert!(matches!(ingest_footprints(&cfg), Err(Error::Io { .. })));
    std::fs::write(dir.path().join("broken.geojson"), "{\n\"features\": [\n{,").unwrap();
    let cfg = IngestConfig::new(dir.path().join("broken.geojson"));
    assert!(matches!(ingest_footprints(&cfg), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn overlapping_footprints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let fc = collection(vec![
        building("p", 0.0, 0.0, "detached"),
        json!({ "type": "Feature", "id": "q", "geometry": square(0.0, 0.0, 10.0), "properties": { "building": "detached" } }),
        building("r", 50.0, 0.0, "detached"),
        building("s", 80.0, 0.0, "detached"),
    ]);
    let out = ingest_footprints(&IngestConfig::new(write(dir.path(), "fp.geojson", &fc))).unwrap();
    let ids: Vec<&str> = out.buildings.iter().map(|b| b.id.as_str()).collect();
    assert!(ids.contains(&"r") && ids.contains(&"s"));
    assert!(!out.rejections.is_empty());
    assert!(out.rejections.iter().all(|r| r.reason.starts_with("block union")));
}

#[test]
fn crs_names_normalize() {
    assert_eq!(normalize_crs("urn:ogc:def:crs:EPSG::3035"), "EPSG:3035");
    assert_eq!(normalize_crs("epsg:3035"), "EPSG:3035");
    assert!(check_metric_crs("urn:ogc:def:crs:OGC:1.3:CRS84").is_err());
    assert!(check_metric_crs("EPSG:3035").is_ok());
}

fn small_dataset(n_graphs: usize) -> GraphDataset {
    let town = synth_town(&SynthParams { seed: 4, n_buildings: 600, ..SynthParams::default() }).unwrap();
    let store = BuildingStore::new(town.buildings, CountryList::default()).unwrap();
    let cfg = GenerationConfig { n_graphs, seed: 9, ..GenerationConfig::default() };
    generate_dataset(&store, &cfg, 1).unwrap()
}

#[test]
fn dataset_round_trip_is_exact() {
    let ds = small_dataset(100);
    assert_eq!(ds.subgraphs.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.jsonl");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in ds.subgraphs.iter().zip(&back.subgraphs) {
        for (x, y) in a.features.iter().zip(&b.features) {
            assert!(x.0.iter().zip(y.0.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn dataset_load_failures() {
    let ds = small_dataset(10);
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    // Cut in the middle of line 5.
    let mut cut = lines[..4].join("\n");
    cut.push('\n');
    cut.push_str(&lines[4][..lines[4].len() / 2]);
    match read_dataset(cut.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected parse error, got {other:?}"),
    }
    // Whole lines missing.
    let short = lines[..6].join("\n");
    assert!(matches!(read_dataset(short.as_bytes()), Err(Error::Parse { line: 7, .. })));

    let mut header: Value = serde_json::from_str(lines[0]).unwrap();
    header["manifest"]["feature_checksum"] = json!("0000");
    let tampered = format!("{}\n{}", header, lines[1..].join("\n"));
    assert!(matches!(read_dataset(tampered.as_bytes()), Err(Error::Data(m)) if m.contains("checksum")));

    let mut header: Value = serde_json::from_str(lines[0]).unwrap();
    header["manifest"]["format_version"] = json!(99);
    let tampered = format!("{}\n{}", header, lines[1..].join("\n"));
    assert!(matches!(read_dataset(tampered.as_bytes()), Err(Error::Data(m)) if m.contains("version")));
}

#[test]
fn synth_is_deterministic_and_reingests_identically() {
    let params = SynthParams { seed: 11, n_buildings: 800, ..SynthParams::default() };
    let a = synth_town(&params).unwrap();
    let b = synth_town(&params).unwrap();
    assert_eq!(a.buildings.len(), 800);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = a.write(da.path()).unwrap();
    b.write(db.path()).unwrap();
    for f in ["footprints.geojson", "land_use_ua.geojson", "land_use_clc.geojson", "degurba.geojson", "ground_truth.csv"] {
        let x = std::fs::read(da.path().join(f)).unwrap();
        let y = std::fs::read(db.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let out = ingest_footprints(&cfg).unwrap();
    assert!(out.rejections.is_empty(), "{:?}", &out.rejections[..out.rejections.len().min(3)]);
    assert_eq!(out.buildings, a.buildings);
    assert_eq!(out.unmapped_tags.keys().collect::<Vec<_>>(), ["yes"]);
    assert!(BuildingStore::new(out.buildings, CountryList::default()).is_ok());

    let other = synth_town(&SynthParams { seed: 12, ..params }).unwrap();
    assert_ne!(other.buildings, a.buildings);
}

#[test]
fn pure_detached_grid() {
    let detached = building_class_id("detached").unwrap();
    let mut class_mix = [0.0; 9];
    class_mix[detached] = 1.0;
    let params = SynthParams { seed: 1, n_buildings: 300, class_mix, noise: 0.0, unlabeled: 0.0, ..SynthParams::default() };
    let town = synth_town(&params).unwrap();
    let low = land_use_id("low_density_urban_fabric");
    for (b, &t) in town.buildings.iter().zip(&town.truth) {
        assert_eq!(b.class_label, Some(detached));
        assert_eq!(t, detached);
        assert_eq!(b.land_use, low);
    }
}

fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

#[test]
fn industrial_halls_exceed_houses() {
    let town = synth_town(&SynthParams { seed: 5, n_buildings: 5000, ..SynthParams::default() }).unwrap();
    let area = |classes: &[usize]| -> Vec<f64> {
        town.buildings
            .iter()
            .zip(&town.truth)
            .filter(|(_, t)| classes.contains(t))
            .map(|(b, _)| crate::geom::footprint_area(&b.polygon))
            .collect()
    };
    let industrial = area(&[building_class_id("industrial").unwrap()]);
    let residential = area(&[1, 2, 3]);
    assert!(industrial.len() > 50 && residential.len() > 500);
    assert!(quantile(industrial, 0.1) > quantile(residential, 0.9));
}

#[test]
fn synth_class_shares_follow_mix() {
    let params = SynthParams { seed: 2, n_buildings: 20_000, ..SynthParams::default() };
    let town = synth_town(&params).unwrap();
    let mut counts = [0usize; 9];
    for &t in &town.truth {
        counts[t] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        let share = n as f64 / town.truth.len() as f64;
        assert!((share - params.class_mix[c]).abs() < 0.1, "class {c}: {share}");
    }
    let labeled = town.buildings.iter().filter(|b| b.class_label.is_some()).count() as f64 / 20_000.0;
    assert!((labeled - 0.8).abs() < 0.02);
}

#[test]
fn synth_rejects_bad_params() {
    let bad = [
        SynthParams { n_buildings: 19, ..SynthParams::default() },
        SynthParams { class_mix: [0.0; 9], ..SynthParams::default() },
        SynthParams { class_mix: [-1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], ..SynthParams::default() },
        SynthParams { noise: 1.0, ..SynthParams::default() },
        SynthParams { countries: vec!["xx".into()], ..SynthParams::default() },
    ];
    for p in bad {
        assert!(matches!(synth_town(&p), Err(Error::InvalidConfig(_))));
    }
    assert_eq!(synth_town(&SynthParams { n_buildings: 20, ..SynthParams::default() }).unwrap().buildings.len(), 20);
}
