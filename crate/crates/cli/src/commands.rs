use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use lakejoin_core::augment::{write_replay, VariantSet};
use lakejoin_core::config::{AugmentBackend, RunConfig};
use lakejoin_core::eval::{run_variants, summary_json, write_report_csv, SynthSpec, Variant};
use lakejoin_core::hypergraph::write_pe;
use lakejoin_core::io::{read_f32_matrix, write_f32_matrix};
use lakejoin_core::lake::{Lake, Split};
use lakejoin_core::model::{load_checkpoint, save_checkpoint, Encoder};
use lakejoin_core::pipeline;
use lakejoin_core::search::{run_query, write_results};
use lakejoin_core::train::write_loss_history;
use lakejoin_core::verify::run_property_suite;

use crate::Failure;

const REPLAY: &str = "variants.jsonl";
const CHECKPOINT: &str = "model.ckpt";
const EMBEDDINGS: &str = "embeddings.bin";

pub fn parse_backend(s: &str) -> anyhow::Result<AugmentBackend> {
    Ok(match s {
        "rule" => AugmentBackend::Rule,
        "file" => AugmentBackend::File,
        "llm" => AugmentBackend::Llm,
        "none" => AugmentBackend::None,
        _ => bail!("unknown augment backend {s:?} (rule, file, llm, none)"),
    })
}

fn create_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Validates, logs and echoes the resolved config into `out`.
fn settle(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    cfg.validate()?;
    create_dir(out)?;
    let text = cfg.to_toml();
    log::info!("resolved configuration:\n{text}");
    let path = out.join("config.toml");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn open_lake(root: &Path) -> anyhow::Result<Lake> {
    Lake::open(root).with_context(|| format!("loading lake {}", root.display()))
}

/// A replay file recorded by `augment` in `out` takes precedence over
/// regenerating variants.
fn use_recorded_variants(cfg: &mut RunConfig, out: &Path) {
    let replay = out.join(REPLAY);
    if replay.exists() && cfg.augment.backend != AugmentBackend::None {
        log::info!("using recorded variants in {}", replay.display());
        cfg.augment.backend = AugmentBackend::File;
        cfg.augment.replay = Some(replay);
    }
}

fn variants(lake: &Lake, cfg: &RunConfig) -> anyhow::Result<Vec<VariantSet>> {
    Ok(pipeline::variant_sets(lake, &cfg.augment)?)
}

pub fn ingest(root: &Path, out: &Path) -> Result<(), Failure> {
    let lake = open_lake(root)?;
    let train = lake.pairs.iter().filter(|p| p.split == Split::Train).count();
    let summary = serde_json::json!({
        "tables": lake.tables.tables.len(),
        "columns": lake.columns.len(),
        "pairs": lake.pairs.len(),
        "train_pairs": train,
        "test_pairs": lake.pairs.len() - train,
        "queries": lake.queries.len(),
    });
    let text = serde_json::to_string_pretty(&summary)?;
    create_dir(out)?;
    fs::write(out.join("summary.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

pub fn augment(root: &Path, out: &Path, cfg: RunConfig) -> Result<(), Failure> {
    settle(&cfg, out)?;
    let lake = open_lake(root)?;
    let sets = variants(&lake, &cfg)?;
    if sets.is_empty() {
        return Err(anyhow!("augment.backend = none produces no variants").into());
    }
    let path = out.join(REPLAY);
    write_replay(&path, &lake.columns, &sets)?;
    let total: usize = sets.iter().map(|s| s.variants.len()).sum();
    println!("{} variants for {} columns -> {}", total, sets.len(), path.display());
    Ok(())
}

pub fn build(root: &Path, out: &Path, mut cfg: RunConfig) -> Result<(), Failure> {
    use_recorded_variants(&mut cfg, out);
    settle(&cfg, out)?;
    let lake = open_lake(root)?;
    let sets = variants(&lake, &cfg)?;
    let hg = pipeline::build_hypergraph(&lake, &sets, cfg.hypergraph.singletons)?;
    let pe = pipeline::positional_encoding(&lake, cfg.hin.pe_dim)?;
    hg.write_edges(&out.join("hypergraph.csv"))?;
    write_pe(&out.join("pe.bin"), &pe)?;
    println!(
        "{} nodes, {} hyperedges ({} inter, {} intra) -> {}",
        lake.columns.len(),
        hg.m(),
        hg.count(lakejoin_core::hypergraph::EdgeKind::Inter),
        hg.count(lakejoin_core::hypergraph::EdgeKind::Intra),
        out.display()
    );
    Ok(())
}

pub fn train(root: &Path, out: &Path, mut cfg: RunConfig) -> Result<(), Failure> {
    use_recorded_variants(&mut cfg, out);
    settle(&cfg, out)?;
    let lake = open_lake(root)?;
    let sets = variants(&lake, &cfg)?;
    let prepared = pipeline::prepare(&lake, &cfg, &sets)?;
    let (params, history) = pipeline::train_model(&lake, &prepared, &cfg)?;
    save_checkpoint(&out.join(CHECKPOINT), &params)?;
    write_loss_history(&out.join("loss.csv"), &history)?;
    // A stale store from an earlier model must not be served.
    let store = out.join(EMBEDDINGS);
    if store.exists() {
        fs::remove_file(&store)?;
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("{} epochs, loss {first:.6} -> {last:.6}", history.len());
    }
    Ok(())
}

fn embeddings_from_checkpoint(lake: &Lake, out: &Path, cfg: &RunConfig) -> anyhow::Result<lakejoin_core::autodiff::Mat> {
    let ckpt = out.join(CHECKPOINT);
    if !ckpt.exists() {
        bail!("no checkpoint at {}; run `lakejoin train` first", ckpt.display());
    }
    let params = load_checkpoint(&ckpt)?;
    let sets = variants(lake, cfg)?;
    let prepared = pipeline::prepare(lake, cfg, &sets)?;
    let emb = pipeline::embed(&params, &prepared, Encoder::Hin)?;
    // Same precision as the on-disk store, so both paths rank alike.
    Ok(emb.mapv(|x| x as f32 as f64))
}

pub fn embed(root: &Path, out: &Path, mut cfg: RunConfig) -> Result<(), Failure> {
    use_recorded_variants(&mut cfg, out);
    settle(&cfg, out)?;
    let lake = open_lake(root)?;
    let emb = embeddings_from_checkpoint(&lake, out, &cfg)?;
    let path = out.join(EMBEDDINGS);
    write_f32_matrix(&path, &emb).with_context(|| format!("writing {}", path.display()))?;
    println!("{} x {} embeddings -> {}", emb.nrows(), emb.ncols(), path.display());
    Ok(())
}

pub fn query(
    root: &Path,
    out: &Path,
    mut cfg: RunConfig,
    table: &str,
    column: &str,
    output: Option<&Path>,
) -> Result<(), Failure> {
    use_recorded_variants(&mut cfg, out);
    settle(&cfg, out)?;
    let lake = open_lake(root)?;
    let q = lake
        .columns
        .find(table, column)
        .ok_or_else(|| anyhow!("no textual column {table}.{column} in the lake"))?;
    let store = out.join(EMBEDDINGS);
    let emb = if store.exists() {
        read_f32_matrix(&store).with_context(|| format!("reading {}", store.display()))?
    } else {
        embeddings_from_checkpoint(&lake, out, &cfg)?
    };
    if emb.nrows() != lake.columns.len() {
        return Err(anyhow!(
            "embedding store has {} rows but the lake has {} columns",
            emb.nrows(),
            lake.columns.len()
        )
        .into());
    }
    let rows = run_query(q, &emb, &lake.columns.table_indices(), &cfg.search)?;
    match output {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_results(io::BufWriter::new(f), &lake.columns, q, &rows)?;
        }
        None => write_results(io::stdout().lock(), &lake.columns, q, &rows)?,
    }
    Ok(())
}

pub fn eval(root: &Path, out: &Path, mut cfg: RunConfig, names: &[String]) -> Result<(), Failure> {
    use_recorded_variants(&mut cfg, out);
    settle(&cfg, out)?;
    let variants: Vec<Variant> = if names.is_empty() {
        Variant::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| n.parse::<Variant>().map_err(|e| anyhow!("{e}")))
            .collect::<anyhow::Result<_>>()?
    };
    let lake = open_lake(root)?;
    if lake.queries.is_empty() {
        return Err(anyhow!("{} has no queries.csv", root.display()).into());
    }
    let sets = self::variants(&lake, &cfg)?;
    let reports = run_variants(&lake, &cfg, &sets, &variants)?;
    for r in &reports {
        log::info!("{}: {:.3} ms per query", r.variant.as_str(), r.mean_query_ms);
    }
    let label: Vec<&str> = variants.iter().map(|v| v.as_str()).collect();
    let stem = format!("eval_{}", label.join("+"));
    let csv_path = out.join(format!("{stem}.csv"));
    let f = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_report_csv(io::BufWriter::new(f), &lake.columns, &reports)?;
    let summary = serde_json::to_string_pretty(&summary_json(&reports))?;
    fs::write(out.join(format!("{stem}.json")), format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

pub fn verify(seed: u64) -> Result<(), Failure> {
    let lines = run_property_suite(seed);
    let mut stdout = io::stdout().lock();
    for l in &lines {
        writeln!(stdout, "{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail)?;
    }
    if lines.iter().all(|l| l.passed) {
        Ok(())
    } else {
        Err(Failure::Gate)
    }
}

pub fn synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut s = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let lake = lakejoin_core::eval::synth_lake(&s)?;
    lake.write(out)?;
    println!(
        "{} tables, {} join pairs, {} queries -> {}",
        lake.tables.tables.len(),
        lake.pairs.len(),
        lake.queries.len(),
        out.display()
    );
    Ok(())
}
