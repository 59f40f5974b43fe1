//! Config file layers. A config file is flat TOML: top-level keys apply to
//! every command and a table named after a command overrides them. Relative
//! paths are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, Result};

pub const SECTIONS: [&str; 8] =
    ["synth", "ingest", "build", "train", "eval", "importance", "report", "compare_settings"];

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Fanouts {
    List(Vec<usize>),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileLayer {
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    // synth
    pub n: Option<usize>,
    pub noise: Option<f64>,
    pub unlabeled: Option<f64>,
    pub purity: Option<f64>,
    pub shape_noise: Option<f64>,
    pub urban_atlas_coverage: Option<f64>,
    pub countries: Option<Vec<String>>,
    // ingest
    pub ingest_config: Option<PathBuf>,
    pub footprints: Option<PathBuf>,
    pub land_use: Option<Vec<PathBuf>>,
    pub degurba: Option<PathBuf>,
    pub country_layer: Option<PathBuf>,
    pub country_property: Option<String>,
    pub tag_table: Option<PathBuf>,
    pub land_use_table: Option<PathBuf>,
    pub crs: Option<String>,
    // build
    pub input: Option<PathBuf>,
    pub mode: Option<String>,
    pub label_policy: Option<String>,
    pub n_graphs: Option<usize>,
    pub n_sub: Option<usize>,
    pub ratios: Option<Vec<f64>>,
    pub xi: Option<f64>,
    pub hops: Option<usize>,
    // train, eval, importance
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub arch: Option<String>,
    pub task: Option<String>,
    pub scope: Option<String>,
    pub profile: Option<String>,
    pub hidden: Option<usize>,
    pub gnn_layers: Option<usize>,
    pub standard_layers: Option<usize>,
    pub heads: Option<usize>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub fanouts: Option<Fanouts>,
    pub model_xi: Option<f64>,
    pub max_depth: Option<usize>,
    pub n_trees: Option<usize>,
    pub max_features: Option<usize>,
    // report, compare-settings
    pub reports: Option<Vec<PathBuf>>,
    pub tasks: Option<Vec<String>>,
    pub splits: Option<usize>,
    pub seeds: Option<usize>,
}

impl FileLayer {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.out,
            &mut self.ingest_config,
            &mut self.footprints,
            &mut self.degurba,
            &mut self.country_layer,
            &mut self.tag_table,
            &mut self.land_use_table,
            &mut self.input,
            &mut self.dataset,
            &mut self.model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for list in [&mut self.land_use, &mut self.reports].into_iter().flatten() {
            list.iter_mut().for_each(fix);
        }
    }
}

/// The command's own table and the shared top-level keys.
#[derive(Debug, Clone, Default)]
pub struct Layers {
    section: FileLayer,
    common: FileLayer,
}

impl Layers {
    pub fn load(path: Option<&Path>, command: &str) -> Result<Layers> {
        let Some(path) = path else { return Ok(Layers::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read config file {}: {e}; check --config or BLDCLASS_CONFIG", path.display()))
        })?;
        let mut table: toml::Table =
            text.parse().map_err(|e| CliError::usage(format!("{}: invalid TOML: {e}", path.display())))?;
        let own = command.replace('-', "_");
        let mut section = None;
        for name in SECTIONS {
            if let Some(v) = table.remove(name) {
                if name == own {
                    section = Some(v);
                } else if !v.is_table() {
                    return Err(CliError::usage(format!("{}: [{name}] must be a table", path.display())));
                }
            }
        }
        let parse = |v: toml::Value, what: &str| -> Result<FileLayer> {
            v.try_into().map_err(|e| CliError::usage(format!("{}: {what}: {e}", path.display())))
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let mut common = parse(toml::Value::Table(table), "top-level keys")?;
        let mut section = match section {
            Some(v) => parse(v, &format!("[{own}]"))?,
            None => FileLayer::default(),
        };
        common.rebase(base);
        section.rebase(base);
        Ok(Layers { section, common })
    }

    pub fn get<T>(&self, f: impl Fn(&FileLayer) -> Option<T>) -> Option<T> {
        f(&self.section).or_else(|| f(&self.common))
    }

    /// Flag, then config file, then `default`.
    pub fn pick<T>(&self, flag: Option<T>, f: impl Fn(&FileLayer) -> Option<T>, default: T) -> T {
        flag.or_else(|| self.get(f)).unwrap_or(default)
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, f: impl Fn(&FileLayer) -> Option<T>) -> Option<T> {
        flag.or_else(|| self.get(f))
    }
}

/// Parses an enum-like setting, reporting the key on failure.
pub fn parse_setting<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::usage(format!("--{}: {e}", key.replace('_', "-"))))
}

/// `none` disables sampling; otherwise a comma separated list.
pub fn parse_fanouts(f: &Fanouts) -> Result<Option<Vec<usize>>> {
    match f {
        Fanouts::List(v) => Ok(Some(v.clone())),
        Fanouts::Text(s) if s.trim().eq_ignore_ascii_case("none") => Ok(None),
        Fanouts::Text(s) => s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|e| CliError::usage(format!("--fanouts: expected a comma separated list or none: {e}"))),
    }
}
