use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use bldclass::classes::Task;
use bldclass::eval::{AggregateReport, EvalReport};
use bldclass::feature::{BuildingRecord, CountryList};
use bldclass::graphgen::{
    generate_dataset, homophily_ratio, remap_task, BuildingStore, GenerationConfig, GraphDataset, LabelPolicy, Mode,
    Split, SplitRatios, DEFAULT_N_SUB, DEFAULT_XI, UNCONSTRAINED_HOPS,
};
use bldclass::io::{ingest_footprints, load_dataset, save_dataset, synth_town, IngestConfig, SynthParams};
use bldclass_model::{
    cross_validate, load_checkpoint, permutation_importance, save_checkpoint, train_with_progress, Architecture,
    EvalScope, ModelSpec, TrainedModel,
};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::artifacts::{self, num, opt};
use crate::config::{parse_fanouts, parse_setting, Layers};
use crate::error::{CliError, Result};

pub const BUILDINGS_FILE: &str = "buildings.jsonl";
pub const INGEST_FILE: &str = "ingest.toml";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const EVAL_FILE: &str = "eval_report.json";
pub const REPORT_FORMAT: &str = "bldclass-eval-report";
pub const REPORT_VERSION: u32 = 1;

/// Shared state of one invocation.
pub struct Ctx {
    pub layers: Layers,
    pub workers: usize,
    pub quiet: bool,
    started: Instant,
    log: Mutex<Vec<String>>,
}

impl Ctx {
    pub fn new(layers: Layers, workers: usize, quiet: bool) -> Ctx {
        Ctx { layers, workers, quiet, started: Instant::now(), log: Mutex::new(Vec::new()) }
    }

    pub fn info(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        if !self.quiet {
            eprintln!("{msg}");
        }
        let t = self.started.elapsed().as_secs_f64();
        self.log.lock().expect("log lock").push(format!("[{t:9.3}s] {msg}"));
    }

    /// Writes the timing sidecar; the only output with wall-clock content.
    pub fn write_log(&self, out: &Path, command: &str, status: &str) -> Result<()> {
        let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut text = format!(
            "command: {command}\nfinished_unix: {now}\nelapsed_s: {:.3}\nworkers: {}\nstatus: {status}\n",
            self.started.elapsed().as_secs_f64(),
            self.workers
        );
        for line in self.log.lock().expect("log lock").iter() {
            text.push_str(line);
            text.push('\n');
        }
        artifacts::write_text(&out.join("run.log"), &text)
    }
}

/// Runs a command and returns its output directory.
pub fn dispatch(ctx: &Ctx, command: &Command) -> Result<PathBuf> {
    match command {
        Command::Synth(a) => synth(ctx, a),
        Command::Ingest(a) => ingest(ctx, a),
        Command::Build(a) => build(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Importance(a) => importance(ctx, a),
        Command::Report(a) => report(ctx, a),
        Command::CompareSettings(a) => compare(ctx, a),
    }
}

/// Output directory of a command, as resolved before running it.
pub fn out_dir(ctx: &Ctx, command: &Command) -> PathBuf {
    let (flag, default) = match command {
        Command::Synth(a) => (&a.out, "synth"),
        Command::Ingest(a) => (&a.out, "ingest"),
        Command::Build(a) => (&a.out, "dataset"),
        Command::Train(a) => (&a.out, "model"),
        Command::Eval(a) => (&a.out, "eval"),
        Command::Importance(a) => (&a.out, "importance"),
        Command::Report(a) => (&a.out, "report"),
        Command::CompareSettings(a) => (&a.out, "compare"),
    };
    ctx.layers.pick(flag.clone(), |l| l.out.clone(), PathBuf::from(default))
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::file(out, e))
}

fn persist<T: Serialize>(out: &Path, command: &str, resolved: &T) -> Result<()> {
    let text = toml::to_string_pretty(resolved).map_err(|e| CliError::usage(format!("cannot serialize settings: {e}")))?;
    artifacts::write_text(&out.join(format!("{command}.config.toml")), &text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::file(path, e))?;
    text.push('\n');
    artifacts::write_text(path, &text)
}

/// A directory resolves to `dir/name`; a missing file is a usage error.
fn input_file(path: Option<PathBuf>, flag: &str, name: &str, hint: &str) -> Result<PathBuf> {
    let Some(path) = path else {
        return Err(CliError::usage(format!("missing --{flag}; {hint}")));
    };
    let file = if path.is_dir() { path.join(name) } else { path };
    if !file.is_file() {
        return Err(CliError::usage(format!("{} not found; {hint}", file.display())));
    }
    Ok(file)
}

fn dataset_path(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<PathBuf> {
    input_file(
        ctx.layers.pick_opt(flag.clone(), |l| l.dataset.clone()),
        "dataset",
        DATASET_FILE,
        "pass a dataset file or the output directory of `bldclass build`",
    )
}

fn model_path(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<PathBuf> {
    input_file(
        ctx.layers.pick_opt(flag.clone(), |l| l.model.clone()),
        "model",
        MODEL_FILE,
        "pass a checkpoint or the output directory of `bldclass train`",
    )
}

fn scope(ctx: &Ctx, flag: &Option<String>) -> Result<EvalScope> {
    parse_setting("scope", &ctx.layers.pick(flag.clone(), |l| l.scope.clone(), "flagged".into()))
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct SynthResolved {
    out: PathBuf,
    params: SynthParams,
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<PathBuf> {
    let l = &ctx.layers;
    let d = SynthParams::default();
    let params = SynthParams {
        seed: l.pick(a.seed, |f| f.seed, d.seed),
        n_buildings: l.pick(a.n_buildings, |f| f.n, d.n_buildings),
        noise: l.pick(a.noise, |f| f.noise, d.noise),
        unlabeled: l.pick(a.unlabeled, |f| f.unlabeled, d.unlabeled),
        purity: l.pick(a.purity, |f| f.purity, d.purity),
        shape_noise: l.pick(a.shape_noise, |f| f.shape_noise, d.shape_noise),
        urban_atlas_coverage: l.pick(a.urban_atlas_coverage, |f| f.urban_atlas_coverage, d.urban_atlas_coverage),
        countries: l.pick(a.countries.clone(), |f| f.countries.clone(), d.countries.clone()),
        class_mix: d.class_mix,
    };
    params.validate()?;
    let out = l.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("synth"));
    create_out(&out)?;
    persist(&out, "synth", &SynthResolved { out: out.clone(), params: params.clone() })?;
    let town = synth_town(&params)?;
    ctx.info(format!("generated {} buildings", town.buildings.len()));
    let cfg = town.write(&out)?;
    let rel = |p: &Path| p.strip_prefix(&out).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let portable = IngestConfig {
        footprints: rel(&cfg.footprints),
        land_use: cfg.land_use.iter().map(|p| rel(p)).collect(),
        degurba: cfg.degurba.as_deref().map(rel),
        countries: cfg.countries.as_deref().map(rel),
        tag_table: cfg.tag_table.as_deref().map(rel),
        land_use_table: cfg.land_use_table.as_deref().map(rel),
        ..cfg
    };
    let text = toml::to_string_pretty(&portable).map_err(|e| CliError::usage(e.to_string()))?;
    artifacts::write_text(&out.join(INGEST_FILE), &text)?;
    ctx.info(format!("wrote {}", out.join(INGEST_FILE).display()));
    Ok(out)
}

// --------------------------------------------------------------- ingest

/// Reads an ingestion config, resolving relative paths against its directory.
pub fn read_ingest_config(path: &Path) -> Result<IngestConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let mut cfg: IngestConfig =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: invalid ingestion config: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    fix(&mut cfg.footprints);
    cfg.land_use.iter_mut().for_each(fix);
    for p in [&mut cfg.degurba, &mut cfg.countries, &mut cfg.tag_table, &mut cfg.land_use_table].into_iter().flatten() {
        fix(p);
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct IngestResolved {
    out: PathBuf,
    ingest: IngestConfig,
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<PathBuf> {
    let l = &ctx.layers;
    let hint = "pass --footprints FILE or --ingest-config FILE (e.g. the ingest.toml written by `bldclass synth`)";
    let base = l.pick_opt(a.ingest_config.clone(), |f| f.ingest_config.clone());
    let footprints = l.pick_opt(a.footprints.clone(), |f| f.footprints.clone());
    let mut cfg = match (base, footprints.clone()) {
        (Some(p), _) => {
            let p = input_file(Some(p), "ingest-config", INGEST_FILE, hint)?;
            read_ingest_config(&p)?
        }
        (None, Some(fp)) => IngestConfig::new(fp),
        (None, None) => return Err(CliError::usage(format!("no footprints given; {hint}"))),
    };
    if let Some(fp) = footprints {
        cfg.footprints = fp;
    }
    if !cfg.footprints.is_file() {
        return Err(CliError::usage(format!("{} not found; {hint}", cfg.footprints.display())));
    }
    if let Some(v) = l.pick_opt(a.land_use.clone(), |f| f.land_use.clone()) {
        cfg.land_use = v;
    }
    cfg.degurba = l.pick_opt(a.degurba.clone(), |f| f.degurba.clone()).or(cfg.degurba);
    cfg.countries = l.pick_opt(a.country_layer.clone(), |f| f.country_layer.clone()).or(cfg.countries);
    cfg.country_property = l.pick(a.country_property.clone(), |f| f.country_property.clone(), cfg.country_property);
    cfg.tag_table = l.pick_opt(a.tag_table.clone(), |f| f.tag_table.clone()).or(cfg.tag_table);
    cfg.land_use_table = l.pick_opt(a.land_use_table.clone(), |f| f.land_use_table.clone()).or(cfg.land_use_table);
    cfg.crs = l.pick(a.crs.clone(), |f| f.crs.clone(), cfg.crs);

    let out = l.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("ingest"));
    create_out(&out)?;
    persist(&out, "ingest", &IngestResolved { out: out.clone(), ingest: cfg.clone() })?;
    let res = ingest_footprints(&cfg)?;
    write_buildings(&out.join(BUILDINGS_FILE), &res.buildings)?;
    let rows: Vec<Vec<String>> = res.rejections.iter().map(|r| vec![r.feature.clone(), r.reason.clone()]).collect();
    artifacts::write_csv(&out.join("rejections.csv"), &["feature", "reason"], &rows)?;
    let rows: Vec<Vec<String>> = res.unmapped_tags.iter().map(|(t, n)| vec![t.clone(), n.to_string()]).collect();
    artifacts::write_csv(&out.join("unmapped_tags.csv"), &["tag", "count"], &rows)?;
    let labeled = res.buildings.iter().filter(|b| b.class_label.is_some()).count();
    ctx.info(format!(
        "ingested {} buildings ({labeled} labeled), rejected {}, {} unmapped tags",
        res.buildings.len(),
        res.rejections.len(),
        res.unmapped_tags.len()
    ));
    Ok(out)
}

pub fn write_buildings(path: &Path, buildings: &[BuildingRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::file(path, e))?;
    let mut w = BufWriter::new(file);
    for b in buildings {
        serde_json::to_writer(&mut w, b).map_err(|e| CliError::file(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::file(path, e))?;
    }
    w.flush().map_err(|e| CliError::file(path, e))
}

pub fn read_buildings(path: &Path) -> Result<Vec<BuildingRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let b = serde_json::from_str(&line).map_err(|e| CliError::file(path, format!("line {}: {e}", i + 1)))?;
        out.push(b);
    }
    Ok(out)
}

/// Buildings from an ingest directory, a synth directory or either file.
fn load_buildings(ctx: &Ctx, input: Option<PathBuf>) -> Result<Vec<BuildingRecord>> {
    let hint = "pass the output directory of `bldclass ingest` or `bldclass synth`, a buildings.jsonl or an ingest.toml";
    let Some(input) = input else { return Err(CliError::usage(format!("missing --input; {hint}"))) };
    let file = if input.is_dir() {
        [BUILDINGS_FILE, INGEST_FILE].iter().map(|n| input.join(n)).find(|p| p.is_file()).ok_or_else(|| {
            CliError::usage(format!("{} holds neither {BUILDINGS_FILE} nor {INGEST_FILE}; {hint}", input.display()))
        })?
    } else if input.is_file() {
        input
    } else {
        return Err(CliError::usage(format!("{} not found; {hint}", input.display())));
    };
    if file.extension().is_some_and(|e| e == "toml") {
        let cfg = read_ingest_config(&file)?;
        let res = ingest_footprints(&cfg)?;
        ctx.info(format!("ingested {} buildings, rejected {}", res.buildings.len(), res.rejections.len()));
        Ok(res.buildings)
    } else {
        read_buildings(&file)
    }
}

// ---------------------------------------------------------------- build

#[derive(Serialize)]
struct BuildResolved {
    input: PathBuf,
    out: PathBuf,
    generation: GenerationConfig,
}

fn ratios(v: Vec<f64>) -> Result<SplitRatios> {
    if v.len() != 3 {
        return Err(CliError::usage(format!("--ratios needs three values, got {}", v.len())));
    }
    Ok(SplitRatios::new(v[0], v[1], v[2])?)
}

fn build(ctx: &Ctx, a: &BuildArgs) -> Result<PathBuf> {
    let l = &ctx.layers;
    let d = GenerationConfig::default();
    let r = SplitRatios::default();
    let generation = GenerationConfig {
        n_graphs: l.pick(a.n_graphs, |f| f.n_graphs, d.n_graphs),
        n_sub: l.pick(a.n_sub, |f| f.n_sub, DEFAULT_N_SUB),
        seed: l.pick(a.seed, |f| f.seed, 0),
        mode: parse_setting("mode", &l.pick(a.mode.clone(), |f| f.mode.clone(), "distance".into()))?,
        label_policy: parse_setting(
            "label_policy",
            &l.pick(a.label_policy.clone(), |f| f.label_policy.clone(), "all".into()),
        )?,
        ratios: ratios(l.pick(a.ratios.clone(), |f| f.ratios.clone(), vec![r.train, r.val, r.test]))?,
        xi: l.pick(a.xi, |f| f.xi, DEFAULT_XI),
        hops: l.pick(a.hops, |f| f.hops, UNCONSTRAINED_HOPS),
    };
    let input = l.pick_opt(a.input.clone(), |f| f.input.clone());
    let buildings = load_buildings(ctx, input.clone())?;
    let out = l.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("dataset"));
    create_out(&out)?;
    persist(&out, "build", &BuildResolved { input: input.unwrap_or_default(), out: out.clone(), generation: generation.clone() })?;
    let n_buildings = buildings.len();
    let n_labeled = buildings.iter().filter(|b| b.class_label.is_some()).count();
    let store = BuildingStore::new(buildings, CountryList::default())?;
    let ds = generate_dataset(&store, &generation, ctx.workers)?;
    save_dataset(&ds, &out.join(DATASET_FILE))?;
    write_summary(&out.join("summary.csv"), &ds, n_buildings, n_labeled)?;
    ctx.info(format!("wrote {} subgraphs to {}", ds.subgraphs.len(), out.join(DATASET_FILE).display()));
    Ok(out)
}

fn write_summary(path: &Path, ds: &GraphDataset, n_buildings: usize, n_labeled: usize) -> Result<()> {
    let policy = ds.manifest.label_policy;
    let mut rows = vec![
        vec!["buildings".into(), n_buildings.to_string()],
        vec!["labeled_buildings".into(), n_labeled.to_string()],
        vec!["subgraphs".into(), ds.subgraphs.len().to_string()],
    ];
    for split in [Split::Train, Split::Val, Split::Test] {
        let sgs: Vec<_> = ds.subgraphs_in(split).collect();
        let terms: usize = sgs.iter().map(|s| s.flagged_nodes(split, policy).len()).sum();
        rows.push(vec![format!("subgraphs_{split}"), sgs.len().to_string()]);
        rows.push(vec![format!("loss_terms_{split}"), terms.to_string()]);
    }
    let nodes: usize = ds.subgraphs.iter().map(|s| s.len()).sum();
    rows.push(vec!["mean_nodes".into(), num(nodes as f64 / ds.subgraphs.len().max(1) as f64)]);
    let h = homophily_ratio(&ds.subgraphs).map(|v| num(v)).unwrap_or_else(|_| "NA".into());
    rows.push(vec!["homophily".into(), h]);
    artifacts::write_csv(path, &["metric", "value"], &rows)
}

// ---------------------------------------------------------------- train

fn profile_spec(profile: &str, arch: Architecture) -> Result<ModelSpec> {
    match profile {
        "reference" => Ok(ModelSpec::reference(arch)),
        "desk" => Ok(ModelSpec::desk(arch)),
        other => Err(CliError::usage(format!("--profile: unknown profile '{other}' (expected reference or desk)"))),
    }
}

/// Profile defaults overridden by flags and config keys.
fn model_spec(ctx: &Ctx, h: &HyperArgs, arch: Architecture) -> Result<(String, ModelSpec)> {
    let l = &ctx.layers;
    let profile = l.pick(h.profile.clone(), |f| f.profile.clone(), "reference".into());
    let mut s = profile_spec(&profile, arch)?;
    s.hidden = l.pick(h.hidden, |f| f.hidden, s.hidden);
    s.gnn_layers = l.pick(h.gnn_layers, |f| f.gnn_layers, s.gnn_layers);
    s.standard_layers = l.pick(h.standard_layers, |f| f.standard_layers, s.standard_layers);
    s.heads = l.pick(h.heads, |f| f.heads, s.heads);
    s.dropout = l.pick(h.dropout, |f| f.dropout, s.dropout);
    s.lr = l.pick(h.lr, |f| f.lr, s.lr);
    s.weight_decay = l.pick(h.weight_decay, |f| f.weight_decay, s.weight_decay);
    s.batch_size = l.pick(h.batch_size, |f| f.batch_size, s.batch_size);
    s.max_epochs = l.pick(h.epochs, |f| f.epochs, s.max_epochs);
    s.patience = l.pick(h.patience, |f| f.patience, s.patience);
    s.xi = l.pick(h.model_xi, |f| f.model_xi, s.xi);
    s.max_depth = l.pick(h.max_depth, |f| f.max_depth, s.max_depth);
    s.n_trees = l.pick(h.n_trees, |f| f.n_trees, s.n_trees);
    if let Some(m) = l.pick_opt(h.max_features, |f| f.max_features) {
        s.max_features = (m > 0).then_some(m);
    }
    let fanouts = match &h.fanouts {
        Some(text) => Some(crate::config::Fanouts::Text(text.clone())),
        None => l.get(|f| f.fanouts.clone()),
    };
    if let Some(f) = fanouts {
        s.fanouts = parse_fanouts(&f)?;
    }
    s.validate()?;
    Ok((profile, s))
}

/// Loads a dataset and maps it to `task` if needed.
fn dataset_for(path: &Path, task: Option<Task>) -> Result<GraphDataset> {
    let ds = load_dataset(path)?;
    match task {
        Some(t) if t != ds.manifest.task => Ok(remap_task(&ds, t)?),
        _ => Ok(ds),
    }
}

#[derive(Serialize)]
struct TrainResolved {
    dataset: PathBuf,
    out: PathBuf,
    seed: u64,
    task: Task,
    label_policy: LabelPolicy,
    profile: String,
    spec: ModelSpec,
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<PathBuf> {
    let l = &ctx.layers;
    let arch: Architecture = parse_setting("arch", &l.pick(a.arch.clone(), |f| f.arch.clone(), "transformer".into()))?;
    let task: Task = parse_setting("task", &l.pick(a.task.clone(), |f| f.task.clone(), "combined9".into()))?;
    let policy: Option<LabelPolicy> = l
        .pick_opt(a.label_policy.clone(), |f| f.label_policy.clone())
        .map(|p| parse_setting("label_policy", &p))
        .transpose()?;
    let seed = l.pick(a.seed, |f| f.seed, 0);
    let (profile, spec) = model_spec(ctx, &a.hyper, arch)?;
    let path = dataset_path(ctx, &a.dataset)?;
    let mut ds = dataset_for(&path, Some(task))?;
    if let Some(p) = policy {
        ds = ds.with_label_policy(p);
    }
    let out = l.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("model"));
    create_out(&out)?;
    persist(
        &out,
        "train",
        &TrainResolved {
            dataset: path,
            out: out.clone(),
            seed,
            task,
            label_policy: ds.manifest.label_policy,
            profile,
            spec: spec.clone(),
        },
    )?;
    ctx.info(format!("training {arch} on {task} ({} loss labels)", ds.manifest.label_policy));
    let mut progress = |r: &bldclass_model::EpochRecord| {
        ctx.info(format!(
            "epoch {:3}  train loss {:.6}  val loss {:.6}  loss terms {}",
            r.epoch, r.train_loss, r.val_loss, r.loss_terms
        ))
    };
    let (model, report) = train_with_progress(&ds, &spec, seed, &mut progress)?;
    save_checkpoint(&model, &out.join(MODEL_FILE))?;
    let rows: Vec<Vec<String>> = (0..report.train_loss.len())
        .map(|e| {
            vec![
                (e + 1).to_string(),
                num(report.train_loss[e]),
                num(report.val_loss[e]),
                report.loss_terms[e].to_string(),
            ]
        })
        .collect();
    artifacts::write_csv(&out.join("training.csv"), &["epoch", "train_loss", "val_loss", "loss_terms"], &rows)?;
    write_json(&out.join("train_report.json"), &report)?;
    ctx.info(format!("best epoch {} of {}, wrote {}", report.best_epoch, report.stopped_epoch, out.join(MODEL_FILE).display()));
    Ok(out)
}

// ----------------------------------------------------------------- eval

/// A versioned evaluation report as written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub task: Task,
    pub scope: EvalScope,
    pub seed: u64,
    pub mode: Mode,
    pub label_policy: LabelPolicy,
    pub dataset_seed: u64,
    pub report: EvalReport,
}

pub fn read_eval_report(path: &Path) -> Result<EvalReportFile> {
    let file = if path.is_dir() { path.join(EVAL_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(CliError::usage(format!("{} not found; pass eval_report.json files or `bldclass eval` output directories", file.display())));
    }
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::file(&file, e))?;
    let r: EvalReportFile = serde_json::from_str(&text).map_err(|e| CliError::file(&file, e))?;
    if r.format != REPORT_FORMAT || r.version != REPORT_VERSION {
        return Err(CliError::file(&file, format!("unsupported report format {} v{}", r.format, r.version)));
    }
    Ok(r)
}

#[derive(Serialize)]
struct EvalResolved {
    model: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
    scope: EvalScope,
}

fn model_and_dataset(ctx: &Ctx, model: &Option<PathBuf>, dataset: &Option<PathBuf>) -> Result<(PathBuf, PathBuf, TrainedModel, GraphDataset)> {
    let mp = model_path(ctx, model)?;
    let dp = dataset_path(ctx, dataset)?;
    let m = load_checkpoint(&mp)?;
    let ds = dataset_for(&dp, Some(m.task))?;
    Ok((mp, dp, m, ds))
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<PathBuf> {
    let scope = scope(ctx, &a.scope)?;
    let (mp, dp, model, ds) = model_and_dataset(ctx, &a.model, &a.dataset)?;
    let out = ctx.layers.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("eval"));
    create_out(&out)?;
    persist(&out, "eval", &EvalResolved { model: mp, dataset: dp, out: out.clone(), scope })?;
    let preds = model.predict_split(&ds, Split::Test, scope)?;
    let report = model.report(&preds)?;
    let file = EvalReportFile {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        architecture: model.spec.architecture,
        task: model.task,
        scope,
        seed: model.seed,
        mode: ds.manifest.mode,
        label_policy: model.label_policy,
        dataset_seed: ds.manifest.seed,
        report: report.clone(),
    };
    write_json(&out.join(EVAL_FILE), &file)?;
    let r = &report;
    let metrics = vec![
        vec!["n_test".into(), r.n_test.to_string()],
        vec!["overall_accuracy".into(), num(r.oa)],
        vec!["kappa".into(), opt(r.kappa)],
        vec!["macro_f1".into(), num(r.f1.macro_f1)],
        vec!["f1_min".into(), num(r.f1.f1_min)],
        vec!["f1_max".into(), num(r.f1.f1_max)],
    ];
    artifacts::write_csv(&out.join("metrics.csv"), &["metric", "value"], &metrics)?;
    let per_class: Vec<Vec<String>> = r
        .f1
        .per_class
        .iter()
        .zip(&r.class_names)
        .map(|(c, n)| {
            vec![
                n.clone(),
                c.support.to_string(),
                c.predicted.to_string(),
                num(c.precision),
                c.precision_undefined.to_string(),
                opt(c.recall),
                opt(c.f1),
            ]
        })
        .collect();
    artifacts::write_csv(
        &out.join("per_class.csv"),
        &["class", "support", "predicted", "precision", "precision_undefined", "recall", "f1"],
        &per_class,
    )?;
    for (name, groups) in [("by_country.csv", &r.by_country), ("by_degurba.csv", &r.by_degurba)] {
        let rows: Vec<Vec<String>> =
            groups.iter().map(|g| vec![g.group.clone(), g.n.to_string(), num(g.oa), g.low_support.to_string()]).collect();
        artifacts::write_csv(&out.join(name), &["group", "n", "overall_accuracy", "low_support"], &rows)?;
    }
    let mut header = vec!["truth".to_string()];
    header.extend(r.class_names.iter().cloned());
    let rows: Vec<Vec<String>> = r
        .confusion
        .iter()
        .zip(&r.class_names)
        .map(|(row, n)| std::iter::once(n.clone()).chain(row.iter().map(|c| c.to_string())).collect())
        .collect();
    artifacts::write_csv(&out.join("confusion.csv"), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    let mut header = vec!["id".to_string(), "truth".into(), "pred".into(), "country".into(), "degurba".into()];
    header.extend(r.class_names.iter().map(|c| format!("p_{c}")));
    let rows: Vec<Vec<String>> = (0..preds.ids.len())
        .map(|i| {
            let mut row = vec![
                preds.ids[i].clone(),
                r.class_names[preds.truth[i]].clone(),
                r.class_names[preds.pred[i]].clone(),
                preds.country[i].clone(),
                preds.degurba[i].clone(),
            ];
            row.extend(preds.probs[i].iter().map(|&p| num(p)));
            row
        })
        .collect();
    artifacts::write_csv(&out.join("predictions.csv"), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    let title = format!("{} / {}", model.spec.architecture.table_label(), model.task.table_label());
    artifacts::write_text(&out.join("confusion.svg"), &artifacts::confusion_svg(r, &title))?;
    artifacts::write_text(&out.join("f1.svg"), &artifacts::f1_svg(r, &title))?;
    ctx.info(format!(
        "{} test nodes: overall accuracy {:.4}, kappa {}, macro F1 {:.4}",
        r.n_test,
        r.oa,
        r.kappa.map_or("undefined".into(), |k| format!("{k:.4}")),
        r.f1.macro_f1
    ));
    Ok(out)
}

// ----------------------------------------------------------- importance

#[derive(Serialize)]
struct ImportanceResolved {
    model: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
    scope: EvalScope,
    seed: u64,
}

fn importance(ctx: &Ctx, a: &ImportanceArgs) -> Result<PathBuf> {
    let scope = scope(ctx, &a.scope)?;
    let seed = ctx.layers.pick(a.seed, |f| f.seed, 0);
    let (mp, dp, model, ds) = model_and_dataset(ctx, &a.model, &a.dataset)?;
    let out = ctx.layers.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("importance"));
    create_out(&out)?;
    persist(&out, "importance", &ImportanceResolved { model: mp, dataset: dp, out: out.clone(), scope, seed })?;
    let rep = permutation_importance(&model, &ds, scope, seed)?;
    let index: BTreeMap<&str, usize> = rep.features.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    let rows: Vec<Vec<String>> = rep
        .ranked()
        .iter()
        .enumerate()
        .map(|(rank, f)| {
            let imp = rep.impurity.as_ref().map(|v| v[index[f.name.as_str()]]);
            vec![(rank + 1).to_string(), f.name.clone(), f.group.name().into(), num(f.drop), opt(imp)]
        })
        .collect();
    artifacts::write_csv(&out.join("importance.csv"), &["rank", "feature", "group", "kappa_drop", "impurity"], &rows)?;
    let rows: Vec<Vec<String>> = rep.groups.iter().map(|(g, d)| vec![g.name().into(), num(*d)]).collect();
    artifacts::write_csv(&out.join("importance_groups.csv"), &["group", "kappa_drop"], &rows)?;
    write_json(&out.join("importance.json"), &rep)?;
    let top: Vec<(String, f64)> = rep.ranked().iter().take(20).map(|f| (f.name.clone(), f.drop)).collect();
    let title = format!("Kappa drop under permutation (baseline {:.4})", rep.baseline_kappa);
    artifacts::write_text(&out.join("importance.svg"), &artifacts::bars_svg(&top, &title))?;
    let groups: Vec<(String, f64)> = rep.groups.iter().map(|(g, d)| (g.name().to_string(), *d)).collect();
    artifacts::write_text(&out.join("importance_groups.svg"), &artifacts::bars_svg(&groups, "Kappa drop per feature group"))?;
    if let Some(f) = rep.ranked().first() {
        ctx.info(format!("baseline kappa {:.4}; top feature {} (drop {:.4})", rep.baseline_kappa, f.name, f.drop));
    }
    Ok(out)
}

// --------------------------------------------------------------- report

pub const PERFORMANCE_ROWS: [&str; 4] = ["Overall accuracy", "Cohen's kappa", "Range of F1-scores", "Macro F1-score"];

#[derive(Serialize)]
struct ReportResolved {
    out: PathBuf,
    reports: Vec<PathBuf>,
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<PathBuf> {
    let l = &ctx.layers;
    let inputs = if a.reports.is_empty() { l.get(|f| f.reports.clone()).unwrap_or_default() } else { a.reports.clone() };
    if inputs.is_empty() {
        return Err(CliError::usage("no reports given; pass eval_report.json files or `bldclass eval` output directories"));
    }
    let mut groups: BTreeMap<(Architecture, Task), Vec<EvalReportFile>> = BTreeMap::new();
    for p in &inputs {
        let r = read_eval_report(p)?;
        groups.entry((r.architecture, r.task)).or_default().push(r);
    }
    for ((arch, task), runs) in &mut groups {
        runs.sort_by_key(|r| (r.dataset_seed, r.seed));
        let first = &runs[0];
        if runs.iter().any(|r| (r.mode, r.label_policy, r.scope) != (first.mode, first.label_policy, first.scope)) {
            return Err(CliError::usage(format!(
                "reports for {arch}/{task} mix generation modes, label policies or scopes; report them separately"
            )));
        }
    }
    let out = l.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("report"));
    create_out(&out)?;
    persist(&out, "report", &ReportResolved { out: out.clone(), reports: inputs })?;

    let aggregates: BTreeMap<(Architecture, Task), AggregateReport> = groups
        .iter()
        .map(|(k, runs)| (*k, AggregateReport::of(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>(), Vec::new())))
        .collect();
    let tasks: Vec<Task> = Task::ALL.into_iter().filter(|t| groups.keys().any(|k| k.1 == *t)).collect();
    let archs: Vec<Architecture> = Architecture::ALL.into_iter().filter(|a| groups.keys().any(|k| k.0 == *a)).collect();

    let mut header = vec!["model", "metric"];
    header.extend(tasks.iter().map(|t| t.table_label()));
    let mut rows = Vec::new();
    for arch in &archs {
        for (m, metric) in PERFORMANCE_ROWS.iter().enumerate() {
            let mut row = vec![arch.table_label().to_string(), metric.to_string()];
            for task in &tasks {
                row.push(match aggregates.get(&(*arch, *task)) {
                    None => String::new(),
                    Some(g) => match m {
                        0 => artifacts::mean_std(&g.oa),
                        1 => artifacts::mean_std(&g.kappa),
                        2 => artifacts::f1_range(&g.f1_min, &g.f1_max),
                        _ => artifacts::mean_std(&g.macro_f1),
                    },
                });
            }
            rows.push(row);
        }
    }
    artifacts::write_csv(&out.join("performance.csv"), &header, &rows)?;

    let mut long = Vec::new();
    for ((arch, task), g) in &aggregates {
        let mut row = vec![arch.table_label().to_string(), task.table_label().to_string(), g.runs.to_string()];
        for d in [&g.oa, &g.kappa, &g.macro_f1, &g.f1_min, &g.f1_max] {
            row.push(num(d.mean));
            row.push(num(d.std));
        }
        long.push(row);
    }
    artifacts::write_csv(
        &out.join("performance_values.csv"),
        &[
            "model", "task", "runs", "oa_mean", "oa_std", "kappa_mean", "kappa_std", "macro_f1_mean", "macro_f1_std",
            "f1_min_mean", "f1_min_std", "f1_max_mean", "f1_max_std",
        ],
        &long,
    )?;
    for ((arch, task), runs) in &groups {
        let title = format!("{} / {}", arch.table_label(), task.table_label());
        let r = &runs[0].report;
        artifacts::write_text(&out.join(format!("confusion_{arch}_{task}.svg")), &artifacts::confusion_svg(r, &title))?;
        artifacts::write_text(&out.join(format!("f1_{arch}_{task}.svg")), &artifacts::f1_svg(r, &title))?;
    }
    ctx.info(format!("aggregated {} model/task groups", groups.len()));
    Ok(out)
}

// ----------------------------------------------------- compare-settings

#[derive(Serialize)]
struct CompareResolved {
    input: PathBuf,
    out: PathBuf,
    seed: u64,
    tasks: Vec<Task>,
    splits: usize,
    seeds: usize,
    scope: EvalScope,
    generation: GenerationConfig,
    profile: String,
    spec: ModelSpec,
}

/// Column label of a generation setting in the kappa comparison table.
pub fn setting_label(mode: Mode, policy: LabelPolicy, hops: usize) -> String {
    let m = match mode {
        Mode::Unconstrained => format!("{hops}-hop"),
        Mode::TwoHop => "2-hop".into(),
        Mode::Distance => "distance".into(),
    };
    format!("{m} ({policy})")
}

fn compare(ctx: &Ctx, a: &CompareArgs) -> Result<PathBuf> {
    let l = &ctx.layers;
    let arch: Architecture = parse_setting("arch", &l.pick(a.arch.clone(), |f| f.arch.clone(), "transformer".into()))?;
    let tasks: Vec<Task> = l
        .pick(a.tasks.clone(), |f| f.tasks.clone(), vec!["combined9".into()])
        .iter()
        .map(|t| parse_setting("tasks", t))
        .collect::<Result<_>>()?;
    let splits = l.pick(a.splits, |f| f.splits, 2);
    let seeds = l.pick(a.seeds, |f| f.seeds, 5);
    if splits == 0 || seeds == 0 || tasks.is_empty() {
        return Err(CliError::usage("--splits, --seeds and --tasks must be non-empty"));
    }
    let scope = scope(ctx, &a.scope)?;
    let seed = l.pick(a.seed, |f| f.seed, 0);
    let generation = GenerationConfig {
        n_graphs: l.pick(a.n_graphs, |f| f.n_graphs, 5000),
        n_sub: l.pick(a.n_sub, |f| f.n_sub, DEFAULT_N_SUB),
        seed,
        ..GenerationConfig::default()
    };
    let (profile, spec) = model_spec(ctx, &a.hyper, arch)?;
    let input = l.pick_opt(a.input.clone(), |f| f.input.clone());
    let buildings = load_buildings(ctx, input.clone())?;
    let out = l.pick(a.out.clone(), |f| f.out.clone(), PathBuf::from("compare"));
    create_out(&out)?;
    persist(
        &out,
        "compare-settings",
        &CompareResolved {
            input: input.unwrap_or_default(),
            out: out.clone(),
            seed,
            tasks: tasks.clone(),
            splits,
            seeds,
            scope,
            generation: generation.clone(),
            profile,
            spec: spec.clone(),
        },
    )?;
    let store = BuildingStore::new(buildings, CountryList::default())?;
    let modes = [Mode::Unconstrained, Mode::TwoHop, Mode::Distance];
    let policies = [LabelPolicy::Center, LabelPolicy::All];
    let mut columns = Vec::new();
    let mut table: BTreeMap<(Task, usize), AggregateReport> = BTreeMap::new();
    let mut runs = Vec::new();
    for mode in modes {
        let base = generate_dataset(&store, &GenerationConfig { mode, ..generation.clone() }, ctx.workers)?;
        for policy in policies {
            let col = columns.len();
            columns.push(setting_label(mode, policy, generation.hops));
            let ds = base.clone().with_label_policy(policy);
            for &task in &tasks {
                let d = if task == ds.manifest.task { ds.clone() } else { remap_task(&ds, task)? };
                ctx.info(format!("{} / {task}: {splits} splits x {seeds} seeds", columns[col]));
                let cv = cross_validate(&d, &spec, splits, seeds, seed, scope, ctx.workers)?;
                for r in &cv.runs {
                    let rep = r.report.as_ref();
                    runs.push(vec![
                        mode.to_string(),
                        policy.to_string(),
                        task.to_string(),
                        r.split.to_string(),
                        r.seed.to_string(),
                        opt(rep.and_then(|x| x.kappa)),
                        opt(rep.map(|x| x.oa)),
                        opt(rep.map(|x| x.f1.macro_f1)),
                        r.training.as_ref().and_then(|t| t.loss_terms.first()).map_or_else(String::new, |n| n.to_string()),
                        r.error.clone().unwrap_or_default(),
                    ]);
                }
                if !cv.aggregate.excluded.is_empty() {
                    ctx.info(format!("excluded {} diverged runs", cv.aggregate.excluded.len()));
                }
                ctx.info(format!("kappa {}", artifacts::mean_std(&cv.aggregate.kappa)));
                table.insert((task, col), cv.aggregate);
            }
        }
    }
    let mut header = vec!["task".to_string()];
    header.extend(columns.iter().cloned());
    let rows: Vec<Vec<String>> = tasks
        .iter()
        .map(|&t| {
            std::iter::once(t.table_label().to_string())
                .chain((0..columns.len()).map(|c| artifacts::mean_std(&table[&(t, c)].kappa)))
                .collect()
        })
        .collect();
    artifacts::write_csv(&out.join("kappa_comparison.csv"), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    artifacts::write_csv(
        &out.join("kappa_runs.csv"),
        &["mode", "label_policy", "task", "split", "seed", "kappa", "overall_accuracy", "macro_f1", "loss_terms", "error"],
        &runs,
    )?;
    Ok(out)
}
