//! Command-line behavior: exit statuses, configuration handling, reports.

use std::path::Path;
use std::process::{Command, Output};

use wavekin::cli::{self, RunConfig};

fn wavekin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavekin"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(wavekin(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(wavekin(tmp.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_selector_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wavekin(tmp.path(), &["verify", "no-such-lemma"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-lemma"));
    assert_eq!(wavekin(tmp.path(), &["boardgame", "shuffle"]).status.code(), Some(2));
    assert_eq!(wavekin(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn malformed_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for text in [
        "[grid]\nn_vv = 3\n",
        "[weights]\np = 0.5\n",
        "[grid]\nn_v = 1\n",
        "seed = \"seven\"\n",
        "[[[",
    ] {
        let cfg = write_config(tmp.path(), text);
        let out = wavekin(tmp.path(), &["--config", &cfg, "boardgame", "count"]);
        assert_eq!(out.status.code(), Some(2), "config {text:?}");
    }
    let out = wavekin(tmp.path(), &["--config", "/nonexistent/run.toml", "boardgame", "count"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regime_violation_exits_two_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[grid]\nn_v = 4\n[collision]\nbox_nodes = 4\n[solver]\ndata_fraction = 0.8\n");
    let out = wavekin(tmp.path(), &["--config", &cfg, "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("contraction regime violated"));
}

#[test]
fn failed_contract_exits_one_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    // Zero tolerance cannot absorb the roundoff gap of the nested integrals.
    let cfg = write_config(tmp.path(), "[boardgame]\ntolerance = 0.0\nprobes = 2\n");
    let out = wavekin(tmp.path(), &["--config", &cfg, "boardgame", "invariance"]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(tmp.path(), "invariance_report.json");
    assert_eq!(r["report"]["pass"], false);
}

#[test]
fn reports_echo_the_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 9\n[boardgame]\nk = 3\nn = 2\n");
    let out = wavekin(tmp.path(), &["--config", &cfg, "--seed", "12", "boardgame", "reduce"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(tmp.path(), "reduce_trace.json");
    assert_eq!(r["config"]["seed"], 12);
    assert_eq!(r["config"]["boardgame"]["k"], 3);
    // Defaults are spelled out, not omitted.
    assert_eq!(r["config"]["weights"]["p"], 2.0);
    assert_eq!(r["report"]["reduction"]["echelon"]["k"], 3);
    assert_eq!(r["report"]["unique_echelon"], true);
}

#[test]
fn boardgame_tables() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(wavekin(tmp.path(), &["boardgame", "enumerate"]).status.code(), Some(0));
    let classes = std::fs::read_to_string(tmp.path().join("out/classes_k2_n2.csv")).unwrap();
    assert_eq!(classes.lines().count(), 1 + 7);
    let histories = std::fs::read_to_string(tmp.path().join("out/histories_k2_n2.csv")).unwrap();
    assert_eq!(histories.lines().count(), 1 + 8);

    assert_eq!(wavekin(tmp.path(), &["boardgame", "count"]).status.code(), Some(0));
    let counts = std::fs::read_to_string(tmp.path().join("out/echelon_counts.csv")).unwrap();
    assert!(counts.lines().any(|l| l.starts_with("2,2,8,7,7,64,true")), "{counts}");
    assert!(counts.lines().skip(1).all(|l| l.ends_with("true")));
}

#[test]
fn admissibility_flags_light_mixture() {
    let tmp = tempfile::tempdir().unwrap();
    let mix = tmp.path().join("mix.json");
    std::fs::write(
        &mix,
        r#"{"weights": [1.0], "components": [{"kind": "uniform", "mass": 0.9, "x_box": 4.0, "center_v": [0, 0, 0], "sigma_v": 1.0}]}"#,
    )
    .unwrap();
    let cfg = write_config(tmp.path(), &format!("[hierarchy]\nmixture = {:?}\n", mix.to_str().unwrap()));
    let out = wavekin(tmp.path(), &["--config", &cfg, "hierarchy", "admissibility"]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(tmp.path(), "admissibility.json");
    assert!(r["report"]["flagged"].as_array().unwrap().iter().any(|f| f == "unit_mass"));
}

#[test]
fn sequential_and_parallel_reports_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[verify]\ncount = 100\n");
    for (sub, flag) in [("a", "--sequential"), ("b", "")] {
        let mut args = vec!["wavekin", "--config", &cfg, "--out"];
        let out = tmp.path().join(sub);
        let out = out.to_str().unwrap().to_string();
        args.push(&out);
        if !flag.is_empty() {
            args.push(flag);
        }
        args.extend(["verify", "one-bracket"]);
        assert_eq!(cli::run(args), 0);
    }
    let a = std::fs::read(tmp.path().join("a/verify_one-bracket.json")).unwrap();
    let b = std::fs::read(tmp.path().join("b/verify_one-bracket.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_config_equals_defaults() {
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    let text = toml::to_string(&RunConfig::default()).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
}
