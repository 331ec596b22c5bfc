//! Retrieval metrics, ablation variants and the synthetic lake generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::VariantSet;
use crate::autodiff::Mat;
use crate::config::RunConfig;
use crate::lake::{
    extract_columns, ColumnRepo, JoinPair, Lake, LakeError, Manifest, ManifestEntry, Split, TableRecord, TableRepo,
};
use crate::model::{Encoder, ModelParams};
use crate::pipeline::{self, PipelineError, Prepared};
use crate::search::{pairwise_joinability, run_query, SearchConfig, SearchError, SimMode};

/// Hits in the first `min(k, |retrieved|)` results over the nominal `k`.
pub fn precision_at_k(retrieved: &[usize], truth: &HashSet<usize>, k: usize) -> f64 {
    assert!(k > 0, "K must be positive");
    hits(retrieved, truth, k) as f64 / k as f64
}

/// Hits over `|truth|`; `None` when the truth set is empty.
pub fn recall_at_k(retrieved: &[usize], truth: &HashSet<usize>, k: usize) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    Some(hits(retrieved, truth, k) as f64 / truth.len() as f64)
}

pub fn hits(retrieved: &[usize], truth: &HashSet<usize>, k: usize) -> usize {
    retrieved.iter().take(k).filter(|c| truth.contains(c)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCr,
    NoHin,
    NoHg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoCr, Variant::NoHin, Variant::NoHg];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCr => "no_cr",
            Variant::NoHin => "no_hin",
            Variant::NoHg => "no_hg",
        }
    }

    /// Whether results are reranked for coherence.
    pub fn rerank(self) -> bool {
        self != Variant::NoCr
    }

    pub fn encoder(self) -> Encoder {
        match self {
            Variant::NoHin => Encoder::FeaturesOnly,
            _ => Encoder::Hin,
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected full, no_cr, no_hin or no_hg)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query: usize,
    /// One entry per K.
    pub precision: Vec<f64>,
    /// `None` when the query has no ground truth.
    pub recall: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub ks: Vec<usize>,
    pub queries: Vec<QueryMetrics>,
    pub mean_precision: Vec<f64>,
    /// Over queries with nonempty truth.
    pub mean_recall: Vec<f64>,
    pub skipped_recall: usize,
    pub mean_query_ms: f64,
}

impl EvalReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean_precision[i])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean_recall[i])
    }
}

/// Scores ranked results against the truth sets.
pub fn score(
    variant: Variant,
    ks: &[usize],
    ranked: &[(usize, Vec<usize>)],
    truth: &HashMap<usize, HashSet<usize>>,
    mean_query_ms: f64,
) -> EvalReport {
    let empty = HashSet::new();
    let mut skipped = 0;
    let queries: Vec<QueryMetrics> = ranked
        .iter()
        .map(|(q, r)| {
            let t = truth.get(q).unwrap_or(&empty);
            if t.is_empty() {
                log::warn!("query {q} has no ground truth; skipped for recall");
                skipped += 1;
            }
            QueryMetrics {
                query: *q,
                precision: ks.iter().map(|&k| precision_at_k(r, t, k)).collect(),
                recall: ks.iter().map(|&k| recall_at_k(r, t, k)).collect(),
            }
        })
        .collect();
    let mean = |xs: Vec<f64>| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let mean_precision = (0..ks.len())
        .map(|i| mean(queries.iter().map(|m| m.precision[i]).collect()))
        .collect();
    let mean_recall = (0..ks.len())
        .map(|i| mean(queries.iter().filter_map(|m| m.recall[i]).collect()))
        .collect();
    EvalReport {
        variant,
        ks: ks.to_vec(),
        queries,
        mean_precision,
        mean_recall,
        skipped_recall: skipped,
        mean_query_ms,
    }
}

/// `(query, ranked column ids)` per query.
pub type Rankings = Vec<(usize, Vec<usize>)>;

/// Ranked column ids per query, queries evaluated in parallel.
pub fn rank_queries(
    queries: &[usize],
    embeddings: &Mat,
    table_of: &[usize],
    cfg: &SearchConfig,
) -> Result<(Rankings, f64), SearchError> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(queries.len().max(1));
    let chunk = queries.len().div_ceil(threads).max(1);
    let start = Instant::now();
    let results: Vec<Result<Rankings, SearchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|qs| {
                s.spawn(move || {
                    qs.iter()
                        .map(|&q| {
                            let rows = run_query(q, embeddings, table_of, cfg)?;
                            Ok((q, rows.into_iter().map(|r| r.column).collect()))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("query worker panicked")).collect()
    });
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let mut out = Vec::with_capacity(queries.len());
    for r in results {
        out.extend(r?);
    }
    let per_query = if queries.is_empty() { 0.0 } else { elapsed / queries.len() as f64 };
    Ok((out, per_query))
}

/// Search settings for evaluating up to the largest K.
pub fn eval_search_config(cfg: &RunConfig, variant: Variant) -> SearchConfig {
    let k = cfg.eval.ks.iter().copied().max().unwrap_or(cfg.search.k);
    SearchConfig {
        b: cfg.search.b.max(k),
        lambda: cfg.search.lambda,
        k,
        rerank: variant.rerank(),
    }
}

/// Evaluates one variant with a trained model. For `no_hg` the model and
/// prepared structure must be the singleton-hyperedge ones.
pub fn run_benchmark(
    lake: &Lake,
    prepared: &Prepared,
    params: &ModelParams,
    cfg: &RunConfig,
    variant: Variant,
) -> Result<EvalReport, PipelineError> {
    let emb = pipeline::embed(params, prepared, variant.encoder())?;
    let search = eval_search_config(cfg, variant);
    let (ranked, ms) = rank_queries(&lake.queries, &emb, &lake.columns.table_indices(), &search)?;
    Ok(score(variant, &cfg.eval.ks, &ranked, &lake.truth(), ms))
}

/// Trains what the requested variants need and evaluates each.
pub fn run_variants(
    lake: &Lake,
    cfg: &RunConfig,
    variant_sets: &[VariantSet],
    variants: &[Variant],
) -> Result<Vec<EvalReport>, PipelineError> {
    let mut reports = Vec::new();
    let needs_full = variants.iter().any(|v| *v != Variant::NoHg);
    let full = if needs_full {
        let prepared = pipeline::prepare(lake, cfg, variant_sets)?;
        let (params, _) = pipeline::train_model(lake, &prepared, cfg)?;
        Some((prepared, params))
    } else {
        None
    };
    let singleton = if variants.contains(&Variant::NoHg) {
        let mut c = cfg.clone();
        c.hypergraph.singletons = true;
        let prepared = pipeline::prepare(lake, &c, variant_sets)?;
        let (params, _) = pipeline::train_model(lake, &prepared, &c)?;
        Some((prepared, params))
    } else {
        None
    };
    for &v in variants {
        let (prepared, params) = match v {
            Variant::NoHg => singleton.as_ref(),
            _ => full.as_ref(),
        }
        .expect("model trained for every requested variant");
        reports.push(run_benchmark(lake, prepared, params, cfg, v)?);
    }
    Ok(reports)
}

pub fn write_report_csv<W: Write>(out: W, repo: &ColumnRepo, reports: &[EvalReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "query", "K", "precision", "recall"])?;
    for r in reports {
        for q in &r.queries {
            let col = &repo.columns[q.query];
            let label = format!("{}.{}", col.table_id, col.name);
            for (i, k) in r.ks.iter().enumerate() {
                w.write_record([
                    r.variant.as_str().to_string(),
                    label.clone(),
                    k.to_string(),
                    format!("{:.6}", q.precision[i]),
                    q.recall[i].map(|x| format!("{x:.6}")).unwrap_or_default(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    variant: &'a str,
    queries: usize,
    skipped_recall: usize,
    mean_precision: BTreeMap<String, f64>,
    mean_recall: BTreeMap<String, f64>,
}

/// Means per variant. Timings are left out so reruns compare equal.
pub fn summary_json(reports: &[EvalReport]) -> serde_json::Value {
    let items: Vec<Summary<'_>> = reports
        .iter()
        .map(|r| Summary {
            variant: r.variant.as_str(),
            queries: r.queries.len(),
            skipped_recall: r.skipped_recall,
            mean_precision: r.ks.iter().map(|k| format!("P@{k}")).zip(r.mean_precision.iter().copied()).collect(),
            mean_recall: r.ks.iter().map(|k| format!("R@{k}")).zip(r.mean_recall.iter().copied()).collect(),
        })
        .collect();
    serde_json::to_value(items).expect("summary serializes")
}

/// Synthetic lake parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub clusters: usize,
    pub tables_per_cluster: usize,
    /// Non-key textual columns per table.
    pub attributes_per_table: usize,
    /// Distinct values in each cluster's key pool.
    pub pool_size: usize,
    pub cells_per_column: usize,
    /// Share of every key column drawn from its cluster's common core.
    pub core_fraction: f64,
    /// Columns placed in one cluster that share values with another's keys.
    pub distractors: usize,
    pub distractor_overlap: f64,
    /// Unrelated textual columns scattered over the tables.
    pub noise_columns: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clusters: 4,
            tables_per_cluster: 6,
            attributes_per_table: 2,
            pool_size: 60,
            cells_per_column: 30,
            core_fraction: 0.7,
            distractors: 4,
            distractor_overlap: 0.6,
            noise_columns: 4,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lake(#[from] LakeError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const DOMAINS: [(&str, &str, &str); 8] = [
    ("customer", "cust", "CUS"),
    ("product", "prod", "PRD"),
    ("supplier", "supp", "SUP"),
    ("employee", "emp", "EMP"),
    ("vehicle", "veh", "VEH"),
    ("patient", "pat", "PAT"),
    ("invoice", "inv", "INV"),
    ("station", "stn", "STN"),
];

const KEY_SUFFIXES: [&str; 5] = ["id", "code", "key", "number", "ref"];

const ATTRIBUTE_WORDS: [&[&str]; 8] = [
    &["gold", "silver", "retail", "wholesale", "loyal", "new", "premium", "basic"],
    &["widget", "gadget", "bolt", "panel", "cable", "sensor", "valve", "pump"],
    &["harbor", "inland", "bulk", "express", "freight", "depot", "mill", "yard"],
    &["manager", "clerk", "analyst", "engineer", "intern", "lead", "driver", "nurse"],
    &["sedan", "truck", "van", "coupe", "bus", "trailer", "wagon", "scooter"],
    &["cardiac", "renal", "ortho", "neuro", "derm", "onco", "pedi", "ortho"],
    &["paid", "overdue", "draft", "void", "partial", "credit", "refund", "billed"],
    &["north", "south", "east", "west", "central", "upper", "lower", "outer"],
];

const NOISE_WORDS: [&str; 12] = [
    "amber", "birch", "cobalt", "delta", "ember", "fjord", "garnet", "heron", "indigo", "jasper", "kelp", "lumen",
];

/// A generated lake with its truth and queries.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLake {
    pub tables: TableRepo,
    /// `(left_table, left_column, right_table, right_column, split)`.
    pub pairs: Vec<(String, String, String, String, Split)>,
    /// `(table, column)` of each query.
    pub queries: Vec<(String, String)>,
}

fn to_rows(columns: &[Vec<String>]) -> Vec<Vec<String>> {
    let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
    (0..rows)
        .map(|r| columns.iter().map(|c| c.get(r).cloned().unwrap_or_default()).collect())
        .collect()
}

/// Clusters of tables whose key columns share a common core of values,
/// plus distractor columns that overlap another cluster's keys and
/// unrelated noise columns. Truth pairs are column pairs whose exact-match
/// joinability reaches 0.5 in either direction.
pub fn synth_lake(spec: &SynthSpec) -> Result<SynthLake, SynthError> {
    let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
    if spec.clusters == 0 || spec.clusters > DOMAINS.len() {
        return bad("clusters must be between 1 and 8");
    }
    if spec.tables_per_cluster < 2 {
        return bad("tables_per_cluster must be at least 2");
    }
    if spec.cells_per_column == 0 || spec.pool_size < spec.cells_per_column {
        return bad("pool_size must be at least cells_per_column > 0");
    }
    if !(0.0..=1.0).contains(&spec.core_fraction) || !(0.0..=1.0).contains(&spec.distractor_overlap) {
        return bad("fractions must lie in [0, 1]");
    }
    if spec.distractors > 0 && spec.clusters < 2 {
        return bad("distractors need at least two clusters");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.cells_per_column;
    let core_n = ((spec.core_fraction * c as f64).ceil() as usize).min(c);

    struct Draft {
        id: String,
        title: String,
        names: Vec<String>,
        columns: Vec<Vec<String>>,
    }

    let mut pools = Vec::new();
    let mut drafts: Vec<Draft> = Vec::new();
    for (ci, &(domain, short, prefix)) in DOMAINS.iter().enumerate().take(spec.clusters) {
        let mut pool: Vec<String> = (0..spec.pool_size)
            .map(|i| format!("{prefix}-{:05}", i * 7919 % 100_000))
            .collect();
        pool.shuffle(&mut rng);
        let (core, rest) = pool.split_at(core_n);
        for t in 0..spec.tables_per_cluster {
            let stem = if t % 2 == 0 { domain } else { short };
            let suffix = KEY_SUFFIXES[t % KEY_SUFFIXES.len()];
            let key_name = if t % 3 == 2 {
                format!("{}{}", capitalize(stem), capitalize(suffix))
            } else {
                format!("{stem}_{suffix}")
            };
            let mut key: Vec<String> = core.to_vec();
            key.extend(rest.choose_multiple(&mut rng, c - core_n).cloned());
            key.shuffle(&mut rng);
            let mut names = vec![key_name];
            let mut columns = vec![key];
            let words = ATTRIBUTE_WORDS[ci];
            for a in 0..spec.attributes_per_table {
                names.push(format!("{domain}_attr{a}"));
                columns.push(
                    (0..c)
                        .map(|i| {
                            let w = words.choose(&mut rng).expect("nonempty word list");
                            format!("{w} {domain} t{t}a{a}n{i}")
                        })
                        .collect(),
                );
            }
            drafts.push(Draft {
                id: format!("{domain}_{t:02}"),
                title: format!("{} records {}", capitalize(domain), t + 1),
                names,
                columns,
            });
        }
        pools.push(core.to_vec());
    }

    let k_over = ((spec.distractor_overlap * c as f64).ceil() as usize).min(core_n);
    for d in 0..spec.distractors {
        let target = d % spec.clusters;
        let host_cluster = (target + 1) % spec.clusters;
        let host = host_cluster * spec.tables_per_cluster + (d / spec.clusters) % spec.tables_per_cluster;
        let mut cells: Vec<String> = pools[target].choose_multiple(&mut rng, k_over).cloned().collect();
        cells.extend((0..c - k_over).map(|i| format!("XDS-{d:02}{i:03}")));
        cells.shuffle(&mut rng);
        let host_domain = DOMAINS[host_cluster].0;
        drafts[host].names.push(format!("{host_domain}_legacy_ref{d}"));
        drafts[host].columns.push(cells);
    }
    for n in 0..spec.noise_columns {
        let host = rng.random_range(0..drafts.len());
        let cells = (0..c)
            .map(|i| format!("{} {}", NOISE_WORDS.choose(&mut rng).expect("nonempty"), n * 1000 + i))
            .collect();
        drafts[host].names.push(format!("note_{n}"));
        drafts[host].columns.push(cells);
    }

    let tables: Vec<TableRecord> = drafts
        .into_iter()
        .map(|d| TableRecord {
            key_column: Some(d.names[0].clone()),
            rows: to_rows(&d.columns),
            table_id: d.id,
            title: d.title,
            column_names: d.names,
        })
        .collect();
    let tables = TableRepo { tables };
    let repo = extract_columns(&tables);

    let mut pairs = Vec::new();
    for a in 0..repo.len() {
        for b in (a + 1)..repo.len() {
            let (ca, cb) = (&repo.columns[a], &repo.columns[b]);
            if ca.table_index == cb.table_index {
                continue;
            }
            let j1 = pairwise_joinability(&ca.cells, &cb.cells, SimMode::Exact).expect("nonempty column");
            let j2 = pairwise_joinability(&cb.cells, &ca.cells, SimMode::Exact).expect("nonempty column");
            if j1 >= 0.5 || j2 >= 0.5 {
                let split = if rng.random_bool(spec.train_fraction) {
                    Split::Train
                } else {
                    Split::Test
                };
                pairs.push((ca.table_id.clone(), ca.name.clone(), cb.table_id.clone(), cb.name.clone(), split));
            }
        }
    }
    let queries = tables
        .tables
        .iter()
        .map(|t| (t.table_id.clone(), t.column_names[0].clone()))
        .collect();
    Ok(SynthLake { tables, pairs, queries })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl SynthLake {
    /// In-memory lake, equivalent to writing and reopening it.
    pub fn to_lake(&self, root: &Path) -> Result<Lake, LakeError> {
        let columns = extract_columns(&self.tables);
        let resolve = |t: &str, c: &str| {
            columns.find(t, c).ok_or_else(|| LakeError::UnknownColumn {
                path: root.join("joins.csv"),
                line: 0,
                table: t.to_string(),
                column: c.to_string(),
            })
        };
        let mut pairs = Vec::new();
        for (lt, lc, rt, rc, split) in &self.pairs {
            pairs.push(JoinPair::new(resolve(lt, lc)?, resolve(rt, rc)?, *split)?);
        }
        let queries = self
            .queries
            .iter()
            .map(|(t, c)| resolve(t, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Lake {
            root: root.to_path_buf(),
            tables: self.tables.clone(),
            columns,
            pairs,
            queries,
        })
    }

    /// Writes the standard lake layout under `root`.
    pub fn write(&self, root: &Path) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        let tables_dir = root.join("tables");
        fs::create_dir_all(&tables_dir).map_err(io(&tables_dir))?;
        let manifest = Manifest {
            tables: self
                .tables
                .tables
                .iter()
                .map(|t| ManifestEntry {
                    id: t.table_id.clone(),
                    file: format!("tables/{}.csv", t.table_id),
                    title: t.title.clone(),
                    key: t.key_column.clone(),
                })
                .collect(),
        };
        let mpath = root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&mpath, text + "\n").map_err(io(&mpath))?;
        let csv_err = |path: &Path, e: csv::Error| SynthError::Lake(LakeError::Csv {
            path: path.to_path_buf(),
            source: e,
        });
        for t in &self.tables.tables {
            let path = tables_dir.join(format!("{}.csv", t.table_id));
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(&t.column_names).map_err(|e| csv_err(&path, e))?;
            for row in &t.rows {
                w.write_record(row).map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(io(&path))?;
        }
        let jpath = root.join("joins.csv");
        let mut w = csv::Writer::from_path(&jpath).map_err(|e| csv_err(&jpath, e))?;
        w.write_record(["left_table", "left_column", "right_table", "right_column", "split"])
            .map_err(|e| csv_err(&jpath, e))?;
        for (lt, lc, rt, rc, s) in &self.pairs {
            w.write_record([lt, lc, rt, rc, s.as_str()]).map_err(|e| csv_err(&jpath, e))?;
        }
        w.flush().map_err(io(&jpath))?;
        let qpath = root.join("queries.csv");
        let mut w = csv::Writer::from_path(&qpath).map_err(|e| csv_err(&qpath, e))?;
        w.write_record(["table", "column"]).map_err(|e| csv_err(&qpath, e))?;
        for (t, c) in &self.queries {
            w.write_record([t, c]).map_err(|e| csv_err(&qpath, e))?;
        }
        w.flush().map_err(io(&qpath))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[usize]) -> HashSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(precision_at_k(&[1, 2, 3, 4, 5], &set(&[1, 2, 3, 4, 5, 6]), 5), 1.0);
        let retrieved: Vec<usize> = (0..15).collect();
        let truth = set(&[0, 5, 9, 100, 101, 102]);
        assert_eq!(precision_at_k(&retrieved, &truth, 15), 0.2);
        assert_eq!(recall_at_k(&retrieved, &truth, 15), Some(0.5));
        assert_eq!(precision_at_k(&[1, 2], &set(&[3]), 5), 0.0);
        assert_eq!(recall_at_k(&[1, 2], &set(&[3]), 5), Some(0.0));
        assert_eq!(recall_at_k(&[1], &HashSet::new(), 5), None);
        // nominal K denominator when fewer results exist
        assert_eq!(precision_at_k(&[1, 2], &set(&[1, 2]), 5), 0.4);
    }

    #[test]
    fn report_means_and_skips() {
        let mut truth = HashMap::new();
        truth.insert(0, set(&[10, 11]));
        truth.insert(1, set(&[12]));
        let ranked = vec![(0, vec![10, 20, 11]), (1, vec![20, 21, 22]), (2, vec![10])];
        let r = score(Variant::Full, &[1, 3], &ranked, &truth, 0.0);
        assert_eq!(r.skipped_recall, 1);
        assert!((r.mean_precision[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.mean_precision[1] - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(r.mean_recall, vec![0.25, 0.5]);
        assert_eq!(r.precision_at(3), Some(r.mean_precision[1]));
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn two_clusters_of_four_without_noise() {
        let spec = SynthSpec {
            clusters: 2,
            tables_per_cluster: 4,
            attributes_per_table: 0,
            distractors: 0,
            noise_columns: 0,
            ..SynthSpec::default()
        };
        let s = synth_lake(&spec).unwrap();
        let lake = s.to_lake(Path::new("mem")).unwrap();
        assert_eq!(lake.columns.len(), 8);
        let truth = lake.truth();
        for &q in &lake.queries {
            let t = &truth[&q];
            let cluster = lake.columns.columns[q].table_index / 4;
            let expected: HashSet<usize> = (0..8)
                .filter(|&c| c != q && lake.columns.columns[c].table_index / 4 == cluster)
                .collect();
            assert_eq!(t, &expected);
        }
    }

    #[test]
    fn distractors_join_their_target_cluster() {
        let s = synth_lake(&SynthSpec::default()).unwrap();
        let lake = s.to_lake(Path::new("mem")).unwrap();
        let truth = lake.truth();
        let distractors: Vec<usize> = (0..lake.columns.len())
            .filter(|&c| lake.columns.columns[c].name.contains("legacy_ref"))
            .collect();
        assert_eq!(distractors.len(), 4);
        for &d in &distractors {
            let partners = &truth[&d];
            assert!(partners.len() >= 6, "{partners:?}");
            // every partner is a key column of a single foreign cluster
            let clusters: HashSet<usize> = partners.iter().map(|&p| lake.columns.columns[p].table_index / 6).collect();
            assert_eq!(clusters.len(), 1);
            assert_ne!(*clusters.iter().next().unwrap(), lake.columns.columns[d].table_index / 6);
        }
        assert_eq!(lake.columns.len(), 4 * 6 * 3 + 4 + 4);
        assert_eq!(lake.queries.len(), 24);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let spec = SynthSpec {
            seed: 9,
            ..SynthSpec::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_lake(&spec).unwrap().write(a.path()).unwrap();
        synth_lake(&spec).unwrap().write(b.path()).unwrap();
        for f in ["manifest.json", "joins.csv", "queries.csv", "tables/customer_00.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let reopened = Lake::open(a.path()).unwrap();
        let mem = synth_lake(&spec).unwrap().to_lake(a.path()).unwrap();
        assert_eq!(reopened.columns, mem.columns);
        assert_eq!(reopened.pairs, mem.pairs);
        assert_eq!(reopened.queries, mem.queries);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(synth_lake(&SynthSpec {
            clusters: 0,
            ..SynthSpec::default()
        })
        .is_err());
        assert!(synth_lake(&SynthSpec {
            pool_size: 5,
            ..SynthSpec::default()
        })
        .is_err());
    }

    fn distinct_ids() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::hash_set(0usize..40, 0..30)
            .prop_map(|s| s.into_iter().collect::<Vec<_>>())
            .prop_shuffle()
    }

    proptest! {
        #[test]
        fn hit_counts_reconstruct(retrieved in distinct_ids(), truth in prop::collection::hash_set(0usize..40, 1..20), k in 1usize..30) {
            let p = precision_at_k(&retrieved, &truth, k);
            prop_assert_eq!((p * k as f64).round() as usize, hits(&retrieved, &truth, k));
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn recall_monotone_in_k(retrieved in distinct_ids(), truth in prop::collection::hash_set(0usize..40, 1..20)) {
            let mut last = 0.0;
            for k in 1..35 {
                let r = recall_at_k(&retrieved, &truth, k).unwrap();
                prop_assert!(r >= last);
                prop_assert!(r <= 1.0);
                last = r;
            }
        }
    }
}
