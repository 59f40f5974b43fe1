use super::*;
use crate::classes::land_use_id;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(id: &str, x: f64, y: f64) -> BuildingRecord {
    BuildingRecord::new(id, Polygon::rect(x, y, x + 1.0, y + 1.0).unwrap())
}

fn block_sets(blocks: &[Block]) -> Vec<Vec<String>> {
    let mut v: Vec<Vec<String>> = blocks.iter().map(|b| b.member_ids.clone()).collect();
    v.sort();
    v
}

#[test]
fn detached_squares_form_singleton_blocks() {
    let b = vec![square("a", 0.0, 0.0), square("b", 5.0, 0.0), square("c", 0.0, 5.0)];
    let blocks = build_blocks(&b).unwrap();
    assert_eq!(blocks.len(), 3);
    assert!(blocks.iter().all(|k| k.members.len() == 1));
}

#[test]
fn row_of_four_merges_into_one_rectangle() {
    let b: Vec<_> = (0..4).map(|i| square(&format!("r{i}"), i as f64, 0.0)).collect();
    let blocks = build_blocks(&b).unwrap();
    assert_eq!(blocks.len(), 1);
    let o = &blocks[0].merged_outline;
    assert_eq!(o.parts.len(), 1);
    assert_eq!(o.parts[0].exterior().len(), 4);
    assert!((o.area() - 4.0).abs() < 1e-9);
    assert!((o.perimeter() - 10.0).abs() < 1e-9);
    assert!((o.elongation() - 0.25).abs() < 1e-9);
}

fn union_find_oracle(b: &[BuildingRecord]) -> Vec<Vec<String>> {
    let n = b.len();
    let mut comp: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if i != j && crate::geom::adjacency::shared_length(&b[i].polygon, &b[j].polygon) > 0.0 {
                    let m = comp[i].min(comp[j]);
                    if comp[i] != m || comp[j] != m {
                        comp[i] = m;
                        comp[j] = m;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
    for i in 0..n {
        groups.entry(comp[i]).or_default().push(b[i].id.clone());
    }
    let mut v: Vec<_> = groups.into_values().collect();
    v.sort();
    v
}

#[test]
fn touching_pairs_match_union_find_oracle() {
    let b = vec![
        square("a", 0.0, 0.0),
        square("b", 1.0, 0.0),
        square("c", 100.0, 100.0),
        square("d", 100.0, 101.0),
    ];
    let blocks = build_blocks(&b).unwrap();
    assert_eq!(blocks.len(), 2);
    assert!(blocks.iter().all(|k| k.members.len() == 2));
    assert_eq!(block_sets(&blocks), union_find_oracle(&b));
}

#[test]
fn random_grids_match_union_find_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut b = Vec::new();
        for gx in 0..8 {
            for gy in 0..4 {
                if rng.gen_bool(0.6) {
                    // Rows at 2 m spacing: horizontal neighbours touch, rows do not.
                    b.push(square(&format!("{gx}_{gy}"), gx as f64, 2.0 * gy as f64));
                }
            }
        }
        if b.is_empty() {
            continue;
        }
        let blocks = build_blocks(&b).unwrap();
        assert_eq!(block_sets(&blocks), union_find_oracle(&b));
        for blk in &blocks {
            let total: f64 = blk.members.iter().map(|&i| footprint_area(&b[i].polygon)).sum();
            assert!((blk.merged_outline.area() - total).abs() < 1e-9);
        }
    }
}

#[test]
fn overlapping_footprints_name_offending_ids() {
    let b = vec![
        BuildingRecord::new("x", Polygon::rect(0.0, 0.0, 2.0, 1.0).unwrap()),
        BuildingRecord::new("y", Polygon::rect(1.0, 0.0, 3.0, 1.0).unwrap()),
        BuildingRecord::new("z", Polygon::rect(2.0, 0.0, 3.0, 1.0).unwrap()),
    ];
    match build_blocks(&b) {
        Err(Error::InvalidGeometry(msg)) => assert!(msg.contains("overlapping") && msg.contains('y'), "{msg}"),
        other => panic!("expected geometry error, got {other:?}"),
    }
}

#[test]
fn detached_square_with_context() {
    let mut b = square("a", 0.0, 0.0);
    b.land_use = land_use_id("continuous_urban_fabric");
    assert!(b.land_use.is_some());
    b.degurba = Some(Degurba::City);
    b.country = "de".into();
    let all = vec![b.clone()];
    let blocks = build_blocks(&all).unwrap();
    let v = node_features(&b, &blocks[0], &all, &[], &CountryList::default());
    assert_eq!(v.building_level()[0], 1.0);
    let bits: f64 = v.0[20..].iter().sum();
    assert_eq!(bits, 3.0);
    assert_eq!(v.land_use_onehot()[NUM_LAND_USE], 0.0);
    assert_eq!(v.as_slice().len(), NUM_NODE_FEATURES);
}

#[test]
fn middle_of_row_of_three() {
    let b: Vec<_> = (0..3).map(|i| square(&format!("r{i}"), i as f64, 0.0)).collect();
    let blocks = build_blocks(&b).unwrap();
    let nb = [&b[0], &b[2]];
    let v = node_features(&b[1], &blocks[0], &b, &nb, &CountryList::default());
    assert_eq!(v.building_level()[8], 2.0);
    assert!((v.building_level()[9] - 2.0).abs() < 1e-9);
    assert_eq!(v.block_level()[0], 3.0);
    assert!((v.block_level()[3] - 3.0).abs() < 1e-9);
    assert_eq!(v.block_level()[2], 0.0);

    let index = SpatialIndex::build(b.iter().map(|r| &r.polygon));
    let table = FeatureTable::compute(&b, &index, &CountryList::default()).unwrap();
    assert_eq!(table.vectors[1], v);
    assert_eq!(table.vectors[0].block_level(), table.vectors[2].block_level());
}

#[test]
fn missing_attributes_encode_as_zero_groups() {
    let mut b = square("a", 0.0, 0.0);
    b.country = "zz".into();
    let all = vec![b.clone()];
    let blocks = build_blocks(&all).unwrap();
    let v = node_features(&b, &blocks[0], &all, &[], &CountryList::default());
    assert!(v.land_use_onehot().iter().all(|&x| x == 0.0));
    assert!(v.degurba_onehot().iter().all(|&x| x == 0.0));
    assert!(v.country_onehot().iter().all(|&x| x == 0.0));
    assert!(v.is_finite());
}

#[test]
fn feature_names_and_groups_line_up() {
    let names = feature_names(&CountryList::default());
    assert_eq!(names.len(), NUM_NODE_FEATURES);
    let covered: usize = FeatureGroup::ALL.iter().map(|g| g.range().len()).sum();
    assert_eq!(covered, NUM_NODE_FEATURES);
    assert_eq!(FeatureGroup::of_column(35), FeatureGroup::LandUse);
    assert_eq!(names[68], "country_uk");
    assert_eq!(feature_checksum(&CountryList::default()).len(), 64);
}

#[test]
fn country_list_requires_thirty_codes() {
    assert!(CountryList::new(["de", "fr"]).is_err());
    let l = CountryList::new(DEFAULT_COUNTRIES.iter().rev()).unwrap();
    assert_eq!(l, CountryList::default());
}

#[test]
fn edge_scaling_boundaries() {
    assert_eq!(scale_edge_feature(0.0, 50.0).unwrap(), 1.0);
    assert_eq!(scale_edge_feature(50.0, 50.0).unwrap(), 0.0);
    assert_eq!(scale_edge_feature(500.0, 50.0).unwrap(), 0.0);
    assert_eq!(scale_edge_feature(25.0, 50.0).unwrap(), 0.5);
    assert!(matches!(scale_edge_feature(1.0, 0.0), Err(Error::InvalidConfig(_))));
    assert!(matches!(scale_edge_feature(1.0, -3.0), Err(Error::InvalidConfig(_))));
}

proptest! {
    #[test]
    fn edge_scaling_is_monotone(a in 0.0f64..1000.0, b in 0.0f64..1000.0, xi in 0.1f64..600.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (flo, fhi) = (scale_edge_feature(lo, xi).unwrap(), scale_edge_feature(hi, xi).unwrap());
        prop_assert!(fhi <= flo);
        prop_assert!((0.0..=1.0).contains(&flo));
    }
}

fn vec_with(col: usize, val: f64) -> NodeFeatureVector {
    let mut v = [0.0; NUM_NODE_FEATURES];
    v[col] = val;
    v[40] = 1.0;
    NodeFeatureVector(v)
}

#[test]
fn normalization_examples() {
    let rows = vec![vec_with(3, 0.0), vec_with(3, 2.0)];
    let s = NormalizationStats::fit(&rows).unwrap();
    assert_eq!(s.apply(&rows[0]).0[3], -1.0);
    assert_eq!(s.apply(&rows[1]).0[3], 1.0);
    // Constant columns map to zero; indicators untouched.
    let c = vec![vec_with(0, 5.0), vec_with(0, 5.0)];
    let s = NormalizationStats::fit(&c).unwrap();
    assert!(s.is_constant(0));
    assert_eq!(s.apply(&c[0]).0[0], 0.0);
    assert_eq!(s.apply(&c[0]).0[40], 1.0);
    assert!(matches!(NormalizationStats::fit(&c[..1]), Err(Error::InvalidState(_))));
    assert!(matches!(NormalizationStats::fit(&[]), Err(Error::InvalidState(_))));
}

#[test]
fn normalized_columns_have_unit_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<NodeFeatureVector> = (0..500)
        .map(|_| {
            let mut v = [0.0; NUM_NODE_FEATURES];
            for x in v.iter_mut().take(NUM_NUMERICAL) {
                *x = rng.gen_range(-50.0..300.0);
            }
            NodeFeatureVector(v)
        })
        .collect();
    let s = NormalizationStats::fit(&rows).unwrap();
    let out: Vec<_> = rows.iter().map(|r| s.apply(r)).collect();
    for c in 0..NUM_NUMERICAL {
        let n = out.len() as f64;
        let m = out.iter().map(|r| r.0[c]).sum::<f64>() / n;
        let sd = (out.iter().map(|r| (r.0[c] - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
    }
}

#[test]
fn feature_vector_serde_round_trip() {
    let v = vec_with(7, 0.1 + 0.2);
    let s = serde_json::to_string(&v).unwrap();
    let back: NodeFeatureVector = serde_json::from_str(&s).unwrap();
    assert_eq!(v, back);
    assert!(serde_json::from_str::<NodeFeatureVector>("[1.0, 2.0]").is_err());
}
