//! Column-name variants and join-key entities.
//!
//! An augmenter proposes alternative names for a column. Each column plus
//! its variants is reduced to a set of canonical keys (lowercased,
//! abbreviation-expanded, token-sorted); columns sharing a key or a train
//! join pair are merged by union-find into one entity.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::featurize::tokenize;
use crate::lake::{ColumnRepo, JoinPair, Split};

pub const DEFAULT_MAX_VARIANTS: usize = 5;
pub const DEFAULT_IN_FLIGHT: usize = 4;
pub const TOKEN_ENV: &str = "LAKEJOIN_LLM_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("augmenter mode {0} needs {1}")]
    Missing(&'static str, &'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantSource {
    Rule,
    File,
    Llm,
}

/// What an augmenter sees of a column.
#[derive(Debug, Clone)]
pub struct ColumnContext<'a> {
    pub table_id: &'a str,
    pub table_title: &'a str,
    pub column_name: &'a str,
    pub samples: &'a [String],
}

pub trait Augmenter: Sync {
    fn source(&self) -> VariantSource;

    /// Raw variant names; callers normalize and truncate.
    fn generate(&self, column: &ColumnContext<'_>) -> Vec<String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub column_id: usize,
    /// Raw variants, trimmed, nonempty, deduplicated.
    pub variants: Vec<String>,
    /// Canonical form of the original name followed by those of the variants,
    /// deduplicated.
    pub canonical: Vec<String>,
    pub source: VariantSource,
}

/// Bidirectional abbreviation table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abbreviations {
    expand: HashMap<String, String>,
    abbreviate: HashMap<String, String>,
}

impl Default for Abbreviations {
    fn default() -> Self {
        let mut a = Self {
            expand: HashMap::new(),
            abbreviate: HashMap::new(),
        };
        for (s, l) in [
            ("id", "identifier"),
            ("num", "number"),
            ("addr", "address"),
            ("dept", "department"),
            ("qty", "quantity"),
        ] {
            a.insert(s, l);
        }
        a
    }
}

impl Abbreviations {
    pub fn insert(&mut self, short: &str, long: &str) {
        let (s, l) = (short.trim().to_lowercase(), long.trim().to_lowercase());
        self.expand.insert(s.clone(), l.clone());
        self.abbreviate.insert(l, s);
    }

    /// Adds `short,long` rows from a CSV file (a `short,long` header is skipped).
    pub fn extend_from_csv(&mut self, path: &Path) -> Result<(), AugmentError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| AugmentError::Parse {
                path: path.to_path_buf(),
                line: 0,
                reason: e.to_string(),
            })?;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| AugmentError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
                return Err(AugmentError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "expected short,long".into(),
                });
            }
            if i == 0 && rec[0].eq_ignore_ascii_case("short") && rec[1].eq_ignore_ascii_case("long") {
                continue;
            }
            self.insert(&rec[0], &rec[1]);
        }
        Ok(())
    }

    pub fn expand<'a>(&'a self, token: &'a str) -> &'a str {
        self.expand.get(token).map_or(token, String::as_str)
    }

    pub fn abbreviate<'a>(&'a self, token: &'a str) -> &'a str {
        self.abbreviate.get(token).map_or(token, String::as_str)
    }

    /// Lowercased, abbreviation-expanded, token-sorted form.
    pub fn canonical(&self, name: &str) -> String {
        let mut toks: Vec<String> = tokenize(name)
            .iter()
            .flat_map(|t| tokenize(self.expand(t)))
            .collect();
        toks.sort();
        toks.join(" ")
    }
}

/// Deterministic variants from splitting, abbreviation and reordering rules.
#[derive(Debug, Clone, Default)]
pub struct RuleAugmenter {
    pub abbreviations: Abbreviations,
}

impl Augmenter for RuleAugmenter {
    fn source(&self) -> VariantSource {
        VariantSource::Rule
    }

    fn generate(&self, column: &ColumnContext<'_>) -> Vec<String> {
        let toks = tokenize(column.column_name);
        if toks.is_empty() {
            return Vec::new();
        }
        let a = &self.abbreviations;
        let expanded: Vec<&str> = toks.iter().map(|t| a.expand(t)).collect();
        let abbreviated: Vec<&str> = toks.iter().map(|t| a.abbreviate(t)).collect();
        vec![
            toks.join(" "),
            expanded.join(" "),
            abbreviated.join(" "),
            a.canonical(column.column_name),
            expanded.join("_"),
        ]
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ReplayRecord {
    table: String,
    column: String,
    variants: Vec<String>,
}

/// Replays previously recorded variants keyed by (table id, column name).
#[derive(Debug, Clone, Default)]
pub struct FileAugmenter {
    records: HashMap<(String, String), Vec<String>>,
}

impl FileAugmenter {
    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut records = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| AugmentError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.insert((rec.table, rec.column), rec.variants);
        }
        Ok(Self { records })
    }
}

impl Augmenter for FileAugmenter {
    fn source(&self) -> VariantSource {
        VariantSource::File
    }

    fn generate(&self, column: &ColumnContext<'_>) -> Vec<String> {
        self.records
            .get(&(column.table_id.to_string(), column.column_name.to_string()))
            .cloned()
            .unwrap_or_default()
    }
}

/// Chat-completion client. Any failure yields no variants and a warning.
#[derive(Debug, Clone)]
pub struct HttpAugmenter {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_variants: usize,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl HttpAugmenter {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.7,
            top_p: 0.9,
            max_variants: DEFAULT_MAX_VARIANTS,
            token: std::env::var(TOKEN_ENV).ok(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn prompt(&self, column: &ColumnContext<'_>) -> String {
        let samples: Vec<&str> = column.samples.iter().take(5).map(String::as_str).collect();
        format!(
            "Table: {}\nColumn: {}\nSample values: {}\n\
             List up to {} alternative names a different table might use for this column. \
             Answer with one name per line and nothing else.",
            column.table_title,
            column.column_name,
            samples.join(" | "),
            self.max_variants
        )
    }

    pub fn request_body(&self, column: &ColumnContext<'_>) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": "You suggest alternative column names for data integration."},
                {"role": "user", "content": self.prompt(column)},
            ],
            "temperature": self.temperature,
            "top_p": self.top_p,
        })
    }

    fn call(&self, column: &ColumnContext<'_>) -> Result<Vec<String>, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(self.request_body(column)).map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or("response has no choices[0].message.content")?;
        Ok(parse_name_list(content))
    }
}

impl Augmenter for HttpAugmenter {
    fn source(&self) -> VariantSource {
        VariantSource::Llm
    }

    fn generate(&self, column: &ColumnContext<'_>) -> Vec<String> {
        match self.call(column) {
            Ok(v) => v,
            Err(e) => {
                log::warn!(
                    "augmenter request for {}.{} failed: {e}",
                    column.table_id,
                    column.column_name
                );
                Vec::new()
            }
        }
    }
}

/// One name per line; list markers and surrounding quotes are stripped.
pub fn parse_name_list(content: &str) -> Vec<String> {
    content
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let l = l.trim_start_matches(['.', ')', '-', '*', ' ']);
            l.trim().trim_matches(['"', '\'', '`']).trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Normalizes an augmenter's output into a variant set.
pub fn generate_variants(
    column_id: usize,
    column: &ColumnContext<'_>,
    augmenter: &dyn Augmenter,
    abbreviations: &Abbreviations,
    max_variants: usize,
) -> VariantSet {
    let mut variants: Vec<String> = Vec::new();
    for v in augmenter.generate(column) {
        let v = v.trim().to_string();
        if !v.is_empty() && !variants.contains(&v) {
            variants.push(v);
        }
        if variants.len() == max_variants {
            break;
        }
    }
    let mut canonical = Vec::new();
    for name in std::iter::once(column.column_name).chain(variants.iter().map(String::as_str)) {
        let c = abbreviations.canonical(name);
        if !c.is_empty() && !canonical.contains(&c) {
            canonical.push(c);
        }
    }
    VariantSet {
        column_id,
        variants,
        canonical,
        source: augmenter.source(),
    }
}

/// Variant sets for every column, ordered by column id. At most `in_flight`
/// augmenter calls run at once.
pub fn generate_all(
    repo: &ColumnRepo,
    augmenter: &dyn Augmenter,
    abbreviations: &Abbreviations,
    max_variants: usize,
    in_flight: usize,
) -> Vec<VariantSet> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<VariantSet>>> = Mutex::new(vec![None; repo.len()]);
    let workers = in_flight.max(1).min(repo.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(col) = repo.columns.get(i) else { break };
                let table = &repo.tables[col.table_index];
                let samples: Vec<String> = col.cells.iter().take(5).cloned().collect();
                let ctx = ColumnContext {
                    table_id: &table.table_id,
                    table_title: &table.title,
                    column_name: &col.name,
                    samples: &samples,
                };
                let set = generate_variants(i, &ctx, augmenter, abbreviations, max_variants);
                out.lock().unwrap()[i] = Some(set);
            });
        }
    });
    out.into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("every column visited"))
        .collect()
}

/// Writes the replay file consumed by [`FileAugmenter`].
pub fn write_replay(path: &Path, repo: &ColumnRepo, sets: &[VariantSet]) -> Result<(), AugmentError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for s in sets {
        let col = &repo.columns[s.column_id];
        let rec = ReplayRecord {
            table: col.table_id.clone(),
            column: col.name.clone(),
            variants: s.variants.clone(),
        };
        let line = serde_json::to_string(&rec).expect("replay record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if already in the same set.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Disjoint cover of the columns; components sorted internally and by
/// smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPartition {
    pub components: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
}

impl EntityPartition {
    pub fn singletons(n: usize) -> Self {
        Self {
            components: (0..n).map(|i| vec![i]).collect(),
            component_of: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Merges columns that share a train join pair or a canonical key. Test
/// pairs are ignored.
pub fn build_join_key_entities(n: usize, variant_sets: &[VariantSet], pairs: &[JoinPair]) -> EntityPartition {
    let mut uf = UnionFind::new(n);
    for p in pairs.iter().filter(|p| p.split == Split::Train) {
        uf.union(p.left, p.right);
    }
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for s in variant_sets {
        for key in &s.canonical {
            match owner.get(key.as_str()) {
                Some(&first) => {
                    uf.union(first, s.column_id);
                }
                None => {
                    owner.insert(key, s.column_id);
                }
            }
        }
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        by_root.entry(uf.find(v)).or_default().push(v);
    }
    let mut components: Vec<Vec<usize>> = by_root.into_values().collect();
    components.sort_by_key(|c| c[0]);
    let mut component_of = vec![0; n];
    for (ci, c) in components.iter().enumerate() {
        for &v in c {
            component_of[v] = ci;
        }
    }
    EntityPartition {
        components,
        component_of,
    }
}
