use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bldclass_cli::args::Cli;
use bldclass_cli::commands::{read_eval_report, PERFORMANCE_ROWS};
use clap::CommandFactory;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bldclass"))
        .args(args)
        .current_dir(dir)
        .env_remove("BLDCLASS_CONFIG")
        .env_remove("BLDCLASS_INPUT")
        .env_remove("BLDCLASS_DATASET")
        .env_remove("BLDCLASS_MODEL")
        .env_remove("BLDCLASS_OUT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = bin(dir, args);
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Synthetic town plus a small distance-based dataset.
fn small_dataset(dir: &Path, n: &str, graphs: &str) -> PathBuf {
    ok(dir, &["-q", "synth", "--seed", "7", "--n", n, "--out", "town"]);
    ok(dir, &["-q", "build", "--input", "town", "--out", "ds", "--n-graphs", graphs, "--seed", "3"]);
    dir.join("ds")
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn synth_build_train_eval_pipeline_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["-q", "synth", "--seed", "7", "--n", "2000", "--out", "town"]);
    ok(d, &["-q", "build", "--input", "town", "--out", "ds", "--n-graphs", "400"]);
    ok(d, &["-q", "train", "--dataset", "ds", "--out", "m", "--arch", "transformer", "--profile", "desk", "--epochs", "3"]);
    ok(d, &["-q", "eval", "--model", "m", "--dataset", "ds", "--out", "e"]);
    for f in ["town/ingest.toml", "town/synth.config.toml", "ds/dataset.jsonl", "ds/build.config.toml", "m/model.json"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    for f in ["eval_report.json", "metrics.csv", "per_class.csv", "by_country.csv", "by_degurba.csv", "predictions.csv"] {
        assert!(d.join("e").join(f).is_file(), "{f} missing");
    }
    let r = read_eval_report(&d.join("e")).unwrap();
    assert_eq!(r.report.class_names.len(), 9);
    assert!(r.report.n_test > 0);
    assert!(r.report.oa > 0.0 && r.report.oa <= 1.0);
    let trained = String::from_utf8(read(d.join("m/train.config.toml"))).unwrap();
    assert!(trained.contains("profile = \"desk\"") && trained.contains("max_epochs = 3"));
}

#[test]
fn ingest_reproduces_the_synthetic_buildings() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["-q", "synth", "--seed", "2", "--n", "300", "--out", "town"]);
    ok(d, &["-q", "ingest", "--ingest-config", "town", "--out", "ing"]);
    let lines = String::from_utf8(read(d.join("ing/buildings.jsonl"))).unwrap();
    assert_eq!(lines.lines().count(), 300);
    assert_eq!(csv_rows(&d.join("ing/rejections.csv")).len(), 0);
    // building from the table or from the layers gives the same dataset
    ok(d, &["-q", "build", "--input", "ing", "--out", "a", "--n-graphs", "50"]);
    ok(d, &["-q", "build", "--input", "town", "--out", "b", "--n-graphs", "50"]);
    assert_eq!(read(d.join("a/dataset.jsonl")), read(d.join("b/dataset.jsonl")));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &[]).0, 2);
    assert_eq!(code(d, &["train", "--bogus"]).0, 2);
    assert_eq!(code(d, &["--help"]).0, 0);
    let (c, err) = code(d, &["train"]);
    assert_eq!(c, 2);
    assert!(err.contains("--dataset") && err.contains("bldclass build"), "{err}");
    let (c, err) = code(d, &["build", "--input", "missing"]);
    assert_eq!(c, 2);
    assert!(err.contains("bldclass ingest"), "{err}");
    let (c, err) = code(d, &["ingest"]);
    assert_eq!(c, 2);
    assert!(err.contains("--footprints"), "{err}");

    small_dataset(d, "300", "60");
    let (c, err) = code(d, &["train", "--dataset", "ds", "--arch", "sage", "--gnn-layers", "2", "--fanouts", "3,3,3"]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("fanouts"), "{err}");
    assert_eq!(code(d, &["train", "--dataset", "ds", "--arch", "resnet"]).0, 2);
    assert_eq!(code(d, &["build", "--input", "town", "--ratios", "0.5,0.5,0.5"]).0, 2);
    let (c, err) = code(d, &["train", "--dataset", "ds", "--arch", "mlp", "--profile", "desk", "--lr", "1e250", "--out", "x"]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("diverged"), "{err}");
    std::fs::write(d.join("broken.jsonl"), "{\"manifest\": 1}\n").unwrap();
    assert_eq!(code(d, &["train", "--dataset", "broken.jsonl"]).0, 3);
}

/// Options that name an input have no default; every other option states
/// its default in the help text.
#[test]
fn help_documents_every_flag_and_default() {
    let inputs = [
        "config", "dataset", "model", "input", "footprints", "ingest_config", "land_use", "degurba", "country_layer",
        "reports", "quiet", "help", "version",
    ];
    let mut root = Cli::command();
    root.build();
    let mut checked = 0;
    let mut cmds: Vec<&clap::Command> = vec![&root];
    cmds.extend(root.get_subcommands());
    for cmd in cmds {
        let help = cmd.clone().render_long_help().to_string();
        for arg in cmd.get_arguments() {
            let id = arg.get_id().as_str();
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "{}: --{long} missing from help", cmd.get_name());
            }
            let text = arg.get_long_help().or(arg.get_help()).map(|h| h.to_string()).unwrap_or_default();
            assert!(!text.is_empty(), "{}: {id} has no help", cmd.get_name());
            if !inputs.contains(&id) && arg.get_long().is_some() {
                assert!(text.contains("[default:"), "{}: {id} does not state its default", cmd.get_name());
            }
            checked += 1;
        }
    }
    assert!(checked > 80, "{checked}");
    let help = String::from_utf8(ok(Path::new("."), &["--help"]).stdout).unwrap();
    for c in ["synth", "ingest", "build", "train", "eval", "importance", "report", "compare-settings"] {
        assert!(help.contains(c), "{c} missing from help");
    }
    assert!(help.contains("Exit codes"));
}

#[test]
fn all_labels_give_more_loss_terms_than_center_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "600", "80");
    let common = ["train", "--dataset", "ds", "--arch", "sage", "--profile", "desk", "--epochs", "3", "--fanouts", "none"];
    let mut terms = Vec::new();
    for policy in ["center", "all"] {
        let out = format!("m_{policy}");
        let mut args = vec!["--workers", "1"];
        args.extend(common);
        args.extend(["--label-policy", policy, "--out", &out]);
        let stderr = String::from_utf8(ok(d, &args).stderr).unwrap();
        assert!(stderr.contains("loss terms"), "{stderr}");
        let log = String::from_utf8(read(d.join(&out).join("run.log"))).unwrap();
        assert!(log.contains("loss terms"));
        let rows = csv_rows(&d.join(&out).join("training.csv"));
        assert_eq!(rows.len(), 3);
        terms.push(rows.iter().map(|r| r[3].parse::<usize>().unwrap()).collect::<Vec<_>>());
    }
    for (c, a) in terms[0].iter().zip(&terms[1]) {
        assert!(a > c, "all {a} vs center {c}");
    }
    // without sampling every epoch sees the same labels
    assert!(terms[0].iter().all(|&t| t == terms[0][0]));
}

#[test]
fn outputs_do_not_depend_on_the_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["-q", "synth", "--seed", "5", "--n", "500", "--out", "town"]);
    for w in ["1", "3"] {
        let o = |s: &str| format!("{s}{w}");
        ok(d, &["-q", "--workers", w, "build", "--input", "town", "--out", &o("ds"), "--n-graphs", "120"]);
        ok(d, &["-q", "--workers", w, "train", "--dataset", &o("ds"), "--out", &o("rf"), "--arch", "forest", "--n-trees", "6"]);
        ok(d, &["-q", "--workers", w, "train", "--dataset", &o("ds"), "--out", &o("gcn"), "--arch", "gcn", "--profile", "desk", "--epochs", "2"]);
        ok(d, &["-q", "--workers", w, "eval", "--model", &o("rf"), "--dataset", &o("ds"), "--out", &o("e")]);
        ok(d, &["-q", "--workers", w, "importance", "--model", &o("rf"), "--dataset", &o("ds"), "--out", &o("i")]);
    }
    for f in ["ds/dataset.jsonl", "ds/summary.csv", "rf/model.json", "gcn/model.json", "gcn/training.csv", "e/eval_report.json", "e/predictions.csv", "i/importance.csv"] {
        let (dir, name) = f.split_once('/').unwrap();
        assert_eq!(read(d.join(format!("{dir}1/{name}"))), read(d.join(format!("{dir}3/{name}"))), "{f} differs");
    }
    // a repeated run overwrites with identical bytes
    ok(d, &["-q", "build", "--input", "town", "--out", "again", "--n-graphs", "120"]);
    assert_eq!(read(d.join("ds1/dataset.jsonl")), read(d.join("again/dataset.jsonl")));
    let log = String::from_utf8(read(d.join("ds3/run.log"))).unwrap();
    assert!(log.contains("workers: 3") && log.contains("elapsed_s"));
}

#[test]
fn settings_resolve_flag_then_file_then_default() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["-q", "synth", "--seed", "1", "--n", "400", "--out", "town"]);
    std::fs::write(d.join("run.toml"), "n_graphs = 40\ninput = \"town\"\n[build]\nn_graphs = 55\nseed = 9\n[train]\nseed = 4\n").unwrap();
    let summary = |dir: &str| -> usize {
        let rows = csv_rows(&d.join(dir).join("summary.csv"));
        rows.iter().find(|r| &r[0] == "subgraphs").unwrap()[1].parse().unwrap()
    };
    ok(d, &["-q", "--config", "run.toml", "build", "--out", "a"]);
    assert_eq!(summary("a"), 55);
    ok(d, &["-q", "--config", "run.toml", "build", "--out", "b", "--n-graphs", "30"]);
    assert_eq!(summary("b"), 30);
    let persisted = String::from_utf8(read(d.join("b/build.config.toml"))).unwrap();
    assert!(persisted.contains("n_graphs = 30") && persisted.contains("seed = 9"), "{persisted}");
    ok(d, &["-q", "build", "--input", "town", "--out", "c"]);
    let persisted = String::from_utf8(read(d.join("c/build.config.toml"))).unwrap();
    assert!(persisted.contains("n_graphs = 5000") && persisted.contains("n_sub = 20"), "{persisted}");
    assert!(persisted.contains("mode = \"distance\"") && persisted.contains("label_policy = \"all\""));

    // environment variables stand in for path flags
    let out = Command::new(env!("CARGO_BIN_EXE_bldclass"))
        .args(["-q", "build", "--n-graphs", "20"])
        .current_dir(d)
        .env("BLDCLASS_INPUT", "town")
        .env("BLDCLASS_OUT", "from_env")
        .env_remove("BLDCLASS_CONFIG")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary("from_env"), 20);

    std::fs::write(d.join("bad.toml"), "n_graph = 40\n").unwrap();
    let (c, err) = code(d, &["--config", "bad.toml", "build", "--input", "town"]);
    assert_eq!(c, 2);
    assert!(err.contains("n_graph"), "{err}");
    assert_eq!(code(d, &["--config", "nowhere.toml", "build"]).0, 2);
}

#[test]
fn report_and_comparison_tables_use_the_result_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "500", "100");
    let mut reports = Vec::new();
    for (arch, seed) in [("tree", "0"), ("mlp", "0"), ("mlp", "1")] {
        let m = format!("m_{arch}_{seed}");
        let e = format!("e_{arch}_{seed}");
        ok(d, &["-q", "train", "--dataset", "ds", "--arch", arch, "--seed", seed, "--profile", "desk", "--epochs", "3", "--out", &m]);
        ok(d, &["-q", "eval", "--model", &m, "--dataset", "ds", "--out", &e]);
        reports.push(e);
    }
    ok(d, &["-q", "train", "--dataset", "ds", "--arch", "tree", "--task", "binary2", "--out", "m_bin"]);
    ok(d, &["-q", "eval", "--model", "m_bin", "--dataset", "ds", "--out", "e_bin"]);
    reports.push("e_bin".into());
    let mut args = vec!["-q", "report", "--out", "r"];
    args.extend(reports.iter().map(String::as_str));
    ok(d, &args);
    let mut rd = csv::Reader::from_path(d.join("r/performance.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["model", "metric", "combined", "res./non res."]);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(&rows[0][0], "Decision tree");
    assert_eq!(&rows[4][0], "Fully connected neural network");
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(&r[1], PERFORMANCE_ROWS[i % 4]);
    }
    assert!(rows[4][2].contains(" ± "));
    assert!(rows[2][2].starts_with('[') && rows[2][2].contains(" - "));
    assert_eq!(&rows[5][3], "", "the MLP was not run on the binary task");
    for f in ["confusion_tree_combined9.svg", "f1_mlp_combined9.svg", "confusion_tree_binary2.svg"] {
        let svg = String::from_utf8(read(d.join("r").join(f))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{f}");
    }
    assert_eq!(code(d, &["report"]).0, 2);

    ok(d, &[
        "-q", "compare-settings", "--input", "town", "--out", "cmp", "--arch", "mlp", "--profile", "desk", "--epochs", "2",
        "--n-graphs", "60", "--splits", "1", "--seeds", "2",
    ]);
    let mut rd = csv::Reader::from_path(d.join("cmp/kappa_comparison.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["task", "4-hop (center)", "4-hop (all)", "2-hop (center)", "2-hop (all)", "distance (center)", "distance (all)"]
    );
    assert_eq!(rd.records().count(), 1);
    assert_eq!(csv_rows(&d.join("cmp/kappa_runs.csv")).len(), 12);
}
