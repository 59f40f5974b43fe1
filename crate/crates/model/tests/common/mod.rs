#![allow(dead_code)]

use bldclass::feature::CountryList;
use bldclass::graphgen::{fit_normalization, generate_dataset, BuildingStore, GenerationConfig, GraphDataset, LabelPolicy, Mode};
use bldclass::io::{synth_town, SynthParams};

pub fn dataset(seed: u64, n_buildings: usize, n_graphs: usize, mode: Mode, policy: LabelPolicy) -> GraphDataset {
    let town = synth_town(&SynthParams { seed, n_buildings, ..SynthParams::default() }).unwrap();
    let store = BuildingStore::new(town.buildings, CountryList::default()).unwrap();
    let cfg = GenerationConfig { n_graphs, seed, mode, label_policy: policy, ..GenerationConfig::default() };
    generate_dataset(&store, &cfg, 1).unwrap()
}

pub fn small(seed: u64) -> GraphDataset {
    dataset(seed, 400, 40, Mode::Distance, LabelPolicy::All)
}

/// Overwrites column `col` with the node label (-1 for unlabeled nodes)
/// and refits the normalization.
pub fn plant(mut ds: GraphDataset, col: usize) -> GraphDataset {
    for sg in ds.subgraphs.iter_mut() {
        for (f, l) in sg.features.iter_mut().zip(&sg.labels) {
            f.0[col] = l.map_or(-1.0, |l| l as f64);
        }
    }
    ds.normalization = fit_normalization(&ds.subgraphs).unwrap();
    ds
}
