use std::collections::HashSet;

use lakejoin_core::eval::{run_variants, synth_lake};
use lakejoin_core::model::{load_checkpoint, save_checkpoint};
use lakejoin_core::pipeline;
use lakejoin_core::search::run_query;
use lakejoin_core::{Encoder, Lake, RunConfig, SearchConfig, SynthSpec, Variant};

fn small_config(dim: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.featurizer.dim = dim;
    cfg.hin.dim = dim;
    cfg
}

fn two_cluster_lake(dir: &std::path::Path) -> Lake {
    let spec = SynthSpec {
        clusters: 2,
        tables_per_cluster: 5,
        ..SynthSpec::default()
    };
    synth_lake(&spec).unwrap().write(dir).unwrap();
    Lake::open(dir).unwrap()
}

#[test]
fn training_lowers_the_loss_on_a_planted_lake() {
    let dir = tempfile::tempdir().unwrap();
    let lake = two_cluster_lake(dir.path());
    let cfg = small_config(32);
    let variants = pipeline::variant_sets(&lake, &cfg.augment).unwrap();
    let prepared = pipeline::prepare(&lake, &cfg, &variants).unwrap();
    let (_, history) = pipeline::train_model(&lake, &prepared, &cfg).unwrap();
    assert_eq!(history.len(), 30);
    assert!(history[29] < history[0], "{history:?}");
}

#[test]
fn checkpoint_roundtrip_serves_the_same_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let lake = two_cluster_lake(&dir.path().join("lake"));
    let mut cfg = small_config(16);
    cfg.train.epochs = 3;
    let variants = pipeline::variant_sets(&lake, &cfg.augment).unwrap();
    let prepared = pipeline::prepare(&lake, &cfg, &variants).unwrap();
    let (params, _) = pipeline::train_model(&lake, &prepared, &cfg).unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &params).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let a = pipeline::embed(&params, &prepared, Encoder::Hin).unwrap();
    let b = pipeline::embed(&loaded, &prepared, Encoder::Hin).unwrap();
    let diff = (&a - &b).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(diff < 1e-4, "f32 payload drift {diff}");
    for row in b.rows() {
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn query_returns_k_columns_from_other_tables() {
    let dir = tempfile::tempdir().unwrap();
    let lake = two_cluster_lake(dir.path());
    let mut cfg = small_config(16);
    cfg.train.epochs = 2;
    let variants = pipeline::variant_sets(&lake, &cfg.augment).unwrap();
    let prepared = pipeline::prepare(&lake, &cfg, &variants).unwrap();
    let (params, _) = pipeline::train_model(&lake, &prepared, &cfg).unwrap();
    let emb = pipeline::embed(&params, &prepared, Encoder::Hin).unwrap();
    let table_of = lake.columns.table_indices();
    let q = lake.queries[0];
    for rerank in [true, false] {
        let search = SearchConfig {
            k: 5,
            b: 12,
            rerank,
            ..SearchConfig::default()
        };
        let rows = run_query(q, &emb, &table_of, &search).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        let ids: HashSet<usize> = rows.iter().map(|r| r.column).collect();
        assert_eq!(ids.len(), 5);
        assert!(rows.iter().all(|r| table_of[r.column] != table_of[q]));
        if !rerank {
            assert!(rows.windows(2).all(|w| w[0].relevance >= w[1].relevance));
            assert!(rows.iter().all(|r| r.attachment.is_none()));
        }
    }
}

#[test]
fn every_variant_reports_under_its_label() {
    let dir = tempfile::tempdir().unwrap();
    let lake = two_cluster_lake(dir.path());
    let mut cfg = small_config(16);
    cfg.train.epochs = 2;
    let variants = pipeline::variant_sets(&lake, &cfg.augment).unwrap();
    let reports = run_variants(&lake, &cfg, &variants, &Variant::ALL).unwrap();
    let labels: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(labels, ["full", "no_cr", "no_hin", "no_hg"]);
    for r in &reports {
        assert_eq!(r.queries.len(), lake.queries.len());
        for p in &r.mean_precision {
            assert!((0.0..=1.0).contains(p));
        }
    }
}

#[test]
fn config_files_are_validated_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "seed = 4\n[featurizer]\ndim = 64\n[hin]\ndim = 64\n").unwrap();
    let cfg = RunConfig::load(&good).unwrap();
    assert_eq!((cfg.seed, cfg.hin.dim), (4, 64));

    let mismatched = dir.path().join("bad.toml");
    std::fs::write(&mismatched, "[hin]\ndim = 64\n").unwrap();
    assert!(RunConfig::load(&mismatched).is_err());
    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[search]\ntop = 3\n").unwrap();
    assert!(RunConfig::load(&unknown).is_err());
}
