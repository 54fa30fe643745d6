mod common;

use std::path::Path;
use std::process::{Command, Output};

fn chartfolio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartfolio"))
        .current_dir(dir)
        .env_remove("CHARTFOLIO_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        "preset = \"desk\"\nrender.width = 64\nrender.height = 64\n\
         train.max_epochs = 1\ncharts.train_stride = 10\n\
         backtest.start_date = \"2021-03-29\"\npaths.input = \"{}\"\n",
        common::fixture("synthetic_market.csv").display()
    );
    std::fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

#[test]
fn missing_embeddings_name_the_encode_step() {
    let dir = setup();
    let d = dir.path();
    assert!(chartfolio(d, &["--config", "config.toml", "ingest"]).status.success());
    let out = chartfolio(d, &["--config", "config.toml", "backtest"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("chartfolio encode"), "{}", stderr(&out));
    let out = chartfolio(d, &["--config", "config.toml", "encode"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("chartfolio train"), "{}", stderr(&out));
}

#[test]
fn missing_input_and_bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = chartfolio(dir.path(), &["ingest", "--input", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = chartfolio(dir.path(), &["backtest", "--k2", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("backtest"), "{}", stderr(&out));
    let out = chartfolio(dir.path(), &["render", "--width", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("render.width"), "{}", stderr(&out));
    let out = chartfolio(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = chartfolio(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["ingest", "render", "train", "encode", "cluster", "backtest", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let out = chartfolio(dir.path(), &["render", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--width", "--height", "--out-dir", "[default: 224]"] {
        assert!(text.contains(flag), "{flag} missing from render help");
    }
}

#[test]
fn locked_report_dir_is_refused() {
    let dir = setup();
    let d = dir.path();
    std::fs::create_dir_all(d.join("report")).unwrap();
    std::fs::write(d.join("report/.lock"), "").unwrap();
    let out = chartfolio(d, &["--config", "config.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    std::fs::remove_file(d.join("report/.lock")).unwrap();
    assert!(chartfolio(d, &["--config", "config.toml", "ingest"]).status.success());
    assert!(!d.join("report/.lock").exists());
}

#[test]
fn out_dir_alias_and_rerun_caching() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["--config", "config.toml"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = cfg.iter().chain(extra).copied().collect();
        let out = chartfolio(d, &args);
        assert!(out.status.success(), "{extra:?}: {}", stderr(&out));
        out
    };
    run(&["ingest"]);
    run(&["render", "--out-dir", "charts2"]);
    assert!(d.join("charts2/formation_manifest.csv").exists());
    assert!(d.join("charts2/train_manifest.csv").exists());
    let manifest = std::fs::read_to_string(d.join("charts2/formation_manifest.csv")).unwrap();
    assert!(manifest.contains("# render={"), "{manifest}");

    run(&["--set", "paths.charts=charts2", "train"]);
    let first = std::fs::read(d.join("artifacts/model.cae")).unwrap();
    let again = run(&["--set", "paths.charts=charts2", "train"]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("up to date"), "{}", String::from_utf8_lossy(&again.stdout));
    assert_eq!(std::fs::read(d.join("artifacts/model.cae")).unwrap(), first);
}
