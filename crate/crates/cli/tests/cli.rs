use std::path::Path;
use std::process::{Command, Output};

fn lakejoin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lakejoin")).args(args).output().unwrap()
}

fn synth(dir: &Path) -> String {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, "clusters = 2\ntables_per_cluster = 4\nseed = 5\n").unwrap();
    let lake = dir.join("lake");
    let out = lakejoin(&["synth", "--spec", spec.to_str().unwrap(), "--out", lake.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = lake.join("lakejoin.toml");
    std::fs::write(&cfg, "[featurizer]\ndim = 16\n[hin]\ndim = 16\n[train]\nepochs = 2\n").unwrap();
    lake.to_str().unwrap().to_string()
}

#[test]
fn query_prints_k_rows_and_echoes_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let lake = synth(dir.path());
    assert!(lakejoin(&["train", &lake]).status.success());
    let out = lakejoin(&["query", &lake, "--table", "customer_00", "--column", "customer_id", "--k", "5", "--b", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "query,rank,table,column,relevance,marginal_gain,attachment_to");
    assert_eq!(lines.len(), 6);

    let echoed = std::fs::read_to_string(Path::new(&lake).join("lakejoin-out/config.toml")).unwrap();
    let cfg = lakejoin_core::RunConfig::from_toml(&echoed).unwrap();
    assert_eq!((cfg.hin.dim, cfg.search.k, cfg.search.b, cfg.train.epochs), (16, 5, 10, 2));
}

#[test]
fn eval_labels_the_requested_variant() {
    let dir = tempfile::tempdir().unwrap();
    let lake = synth(dir.path());
    let out = lakejoin(&["eval", &lake, "--variant", "no_hg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary[0]["variant"], "no_hg");
    let csv = std::fs::read_to_string(Path::new(&lake).join("lakejoin-out/eval_no_hg.csv")).unwrap();
    assert!(csv.starts_with("variant,query,K,precision,recall"));
    assert!(csv.lines().skip(1).all(|l| l.starts_with("no_hg,")));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let lake = synth(dir.path());
    assert_eq!(lakejoin(&["query", &lake, "--table", "nope", "--column", "x"]).status.code(), Some(1));
    assert_eq!(lakejoin(&["train", &lake, "--dim", "10"]).status.code(), Some(1));
    assert_eq!(lakejoin(&["eval", &lake, "--variant", "bogus"]).status.code(), Some(1));
    let missing = dir.path().join("missing");
    assert_eq!(lakejoin(&["ingest", missing.to_str().unwrap()]).status.code(), Some(1));
    // No checkpoint yet in a fresh artifact directory.
    let fresh = dir.path().join("fresh");
    let q = lakejoin(&["query", &lake, "--out", fresh.to_str().unwrap(), "--table", "customer_00", "--column", "customer_id"]);
    assert_eq!(q.status.code(), Some(1));
}

#[test]
fn ingest_augment_build_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let lake = synth(dir.path());
    let out = lakejoin(&["ingest", &lake]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["tables"], 8);
    assert!(lakejoin(&["augment", &lake, "--backend", "rule"]).status.success());
    assert!(lakejoin(&["build", &lake]).status.success());
    let art = Path::new(&lake).join("lakejoin-out");
    for f in ["summary.json", "variants.jsonl", "hypergraph.csv", "pe.bin", "config.toml"] {
        assert!(art.join(f).exists(), "{f}");
    }
    // The recorded variants feed later stages.
    let echoed = std::fs::read_to_string(art.join("config.toml")).unwrap();
    assert!(echoed.contains("backend = \"file\""));
}
