//! Table lake ingestion and the column repository.
//!
//! A lake on disk is a directory holding `manifest.json`, one CSV per table
//! under `tables/`, and optionally `joins.csv` and `queries.csv`. Ingestion
//! validates row widths, then [`extract_columns`] keeps the textual columns
//! with normalized, de-duplicated cells and assigns dense column ids in
//! manifest order then column order.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Fraction of non-blank cells that must parse as numbers for a column to
/// count as numeric (and be dropped).
pub const NUMERIC_FRACTION: f64 = 0.8;

/// Cells used for featurization; joinability scoring sees every cell.
pub const DEFAULT_MAX_FEATURE_CELLS: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum LakeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("table {table_id}: row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        table_id: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate table id {0}")]
    DuplicateTable(String),
    #[error("table {table_id}: declared key column {column} is not in the header")]
    MissingKey { table_id: String, column: String },
    #[error("{path}:{line}: unknown column {table}.{column}")]
    UnknownColumn {
        path: PathBuf,
        line: usize,
        table: String,
        column: String,
    },
    #[error("{path}:{line}: self-join pair")]
    SelfJoin { path: PathBuf, line: usize },
    #[error("{path}:{line}: bad split {split:?} (expected train or test)")]
    BadSplit {
        path: PathBuf,
        line: usize,
        split: String,
    },
    #[error("self-join pair ({0}, {0})")]
    SelfPair(usize),
    #[error("unknown column id {0}")]
    UnknownColumnId(usize),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRecord {
    pub table_id: String,
    pub title: String,
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub key_column: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableRepo {
    pub tables: Vec<TableRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub tables: Vec<ManifestEntry>,
}

/// A textual column admitted to the repository.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRecord {
    pub column_id: usize,
    pub table_id: String,
    /// Dense index of the owning table in manifest order.
    pub table_index: usize,
    pub name: String,
    /// Position of the column in its table's header.
    pub position: usize,
    /// Normalized, de-duplicated cells in first-seen order.
    pub cells: Vec<String>,
}

impl ColumnRecord {
    pub fn cardinality(&self) -> usize {
        self.cells.len()
    }

    /// The cells used for featurization.
    pub fn feature_cells(&self, max_cells: usize) -> &[String] {
        &self.cells[..self.cells.len().min(max_cells)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableInfo {
    pub table_id: String,
    pub title: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnRepo {
    pub tables: Vec<TableInfo>,
    pub columns: Vec<ColumnRecord>,
}

impl ColumnRepo {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn get(&self, id: usize) -> Option<&ColumnRecord> {
        self.columns.get(id)
    }

    /// Column id by `(table_id, column name)`; the first match wins when a
    /// header repeats a name.
    pub fn find(&self, table_id: &str, column: &str) -> Option<usize> {
        self.columns
            .iter()
            .find(|c| c.table_id == table_id && c.name == column)
            .map(|c| c.column_id)
    }

    pub fn table_index_of(&self, id: usize) -> usize {
        self.columns[id].table_index
    }

    pub fn table_indices(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.table_index).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(other.to_string()),
        }
    }
}

/// Undirected joinable pair, stored with `left < right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JoinPair {
    pub left: usize,
    pub right: usize,
    pub split: Split,
}

impl JoinPair {
    pub fn new(a: usize, b: usize, split: Split) -> Result<Self, LakeError> {
        if a == b {
            return Err(LakeError::SelfPair(a));
        }
        Ok(Self {
            left: a.min(b),
            right: a.max(b),
            split,
        })
    }
}

/// Reference to a column, either directly or by table/column name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Id(usize),
    Path { table: String, column: String },
}

impl ColumnRef {
    pub fn resolve(&self, repo: &ColumnRepo) -> Option<usize> {
        match self {
            ColumnRef::Id(id) => (*id < repo.len()).then_some(*id),
            ColumnRef::Path { table, column } => repo.find(table, column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub column: ColumnRef,
    pub k: usize,
}

impl QuerySpec {
    pub fn new(column: ColumnRef, k: usize) -> Result<Self, LakeError> {
        if k == 0 {
            return Err(LakeError::ZeroK);
        }
        Ok(Self { column, k })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LakeError + '_ {
    move |source| LakeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest, LakeError> {
    let path = root.join("manifest.json");
    let mut text = String::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| LakeError::Manifest { path, source })
}

/// Reads one RFC-4180 table whose first row is the header.
pub fn read_table(path: &Path, entry: &ManifestEntry) -> Result<TableRecord, LakeError> {
    let file = File::open(path).map_err(io_err(path))?;
    let csv_err = |source| LakeError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let column_names: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| LakeError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if record.len() != column_names.len() {
            return Err(LakeError::RaggedRow {
                table_id: entry.id.clone(),
                row,
                expected: column_names.len(),
                found: record.len(),
            });
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if let Some(key) = &entry.key {
        if !column_names.contains(key) {
            return Err(LakeError::MissingKey {
                table_id: entry.id.clone(),
                column: key.clone(),
            });
        }
    }
    Ok(TableRecord {
        table_id: entry.id.clone(),
        title: entry.title.clone(),
        column_names,
        rows,
        key_column: entry.key.clone(),
    })
}

/// Parses every table listed in `<root>/manifest.json`.
pub fn ingest_lake(root: &Path) -> Result<TableRepo, LakeError> {
    let manifest = read_manifest(root)?;
    let mut seen = HashSet::new();
    let mut tables = Vec::with_capacity(manifest.tables.len());
    for entry in &manifest.tables {
        if !seen.insert(entry.id.clone()) {
            return Err(LakeError::DuplicateTable(entry.id.clone()));
        }
        tables.push(read_table(&root.join(&entry.file), entry)?);
    }
    Ok(TableRepo { tables })
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_cell(cell: &str) -> String {
    cell.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn is_numeric(cell: &str) -> bool {
    let stripped = cell.replace(',', "");
    stripped.chars().any(|c| c.is_ascii_digit())
        && stripped.parse::<f64>().map(f64::is_finite).unwrap_or(false)
}

/// Normalizes, drops blanks and de-duplicates (first occurrence wins).
/// Returns `None` for numeric columns and for columns left empty. The
/// numeric fraction is measured over distinct values so that cleaning a
/// cleaned column is a no-op.
pub fn clean_column<S: AsRef<str>>(cells: &[S]) -> Option<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for cell in cells {
        let norm = normalize_cell(cell.as_ref());
        if !norm.is_empty() && seen.insert(norm.clone()) {
            out.push(norm);
        }
    }
    let numeric = out.iter().filter(|c| is_numeric(c)).count();
    if out.is_empty() || numeric as f64 >= NUMERIC_FRACTION * out.len() as f64 {
        return None;
    }
    Some(out)
}

/// Builds the column repository from the textual columns of `repo`.
pub fn extract_columns(repo: &TableRepo) -> ColumnRepo {
    let mut out = ColumnRepo::default();
    for (table_index, table) in repo.tables.iter().enumerate() {
        out.tables.push(TableInfo {
            table_id: table.table_id.clone(),
            title: table.title.clone(),
        });
        for (position, name) in table.column_names.iter().enumerate() {
            let raw: Vec<&str> = table.rows.iter().map(|r| r[position].as_str()).collect();
            match clean_column(&raw) {
                Some(cells) => out.columns.push(ColumnRecord {
                    column_id: out.columns.len(),
                    table_id: table.table_id.clone(),
                    table_index,
                    name: name.clone(),
                    position,
                    cells,
                }),
                None => log::warn!(
                    "dropping column {}.{}: numeric or empty after cleaning",
                    table.table_id,
                    name
                ),
            }
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct JoinRow {
    left_table: String,
    left_column: String,
    right_table: String,
    right_column: String,
    split: String,
}

/// Reads `joins.csv`; references resolve against `repo`. Line numbers in
/// errors count the header as line 1.
pub fn load_join_pairs(path: &Path, repo: &ColumnRepo) -> Result<Vec<JoinPair>, LakeError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<JoinRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|source| LakeError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let resolve = |table: &str, column: &str| {
            repo.find(table, column).ok_or_else(|| LakeError::UnknownColumn {
                path: path.to_path_buf(),
                line,
                table: table.to_string(),
                column: column.to_string(),
            })
        };
        let a = resolve(&row.left_table, &row.left_column)?;
        let b = resolve(&row.right_table, &row.right_column)?;
        let split: Split = row.split.parse().map_err(|split| LakeError::BadSplit {
            path: path.to_path_buf(),
            line,
            split,
        })?;
        let pair = JoinPair::new(a, b, split).map_err(|_| LakeError::SelfJoin {
            path: path.to_path_buf(),
            line,
        })?;
        if seen.insert((pair.left, pair.right)) {
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

pub fn write_join_pairs(path: &Path, repo: &ColumnRepo, pairs: &[JoinPair]) -> Result<(), LakeError> {
    let mut w = csv::Writer::from_path(path).map_err(|source| LakeError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let wrap = |source| LakeError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["left_table", "left_column", "right_table", "right_column", "split"])
        .map_err(wrap)?;
    for p in pairs {
        let l = &repo.columns[p.left];
        let r = &repo.columns[p.right];
        w.write_record([
            l.table_id.as_str(),
            l.name.as_str(),
            r.table_id.as_str(),
            r.name.as_str(),
            p.split.as_str(),
        ])
        .map_err(|source| LakeError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Deserialize)]
struct QueryRow {
    table: String,
    column: String,
}

/// Reads `queries.csv` (`table,column`) and resolves each entry.
pub fn load_queries(path: &Path, repo: &ColumnRepo) -> Result<Vec<usize>, LakeError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<QueryRow>().enumerate() {
        let row = row.map_err(|source| LakeError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let id = repo
            .find(&row.table, &row.column)
            .ok_or_else(|| LakeError::UnknownColumn {
                path: path.to_path_buf(),
                line: i + 2,
                table: row.table.clone(),
                column: row.column.clone(),
            })?;
        out.push(id);
    }
    Ok(out)
}

/// A fully loaded lake: tables, column repository, join pairs and queries.
#[derive(Debug, Clone)]
pub struct Lake {
    pub root: PathBuf,
    pub tables: TableRepo,
    pub columns: ColumnRepo,
    pub pairs: Vec<JoinPair>,
    pub queries: Vec<usize>,
}

impl Lake {
    /// Ingests `root`; `joins.csv` and `queries.csv` are optional.
    pub fn open(root: &Path) -> Result<Self, LakeError> {
        let tables = ingest_lake(root)?;
        let columns = extract_columns(&tables);
        let joins = root.join("joins.csv");
        let pairs = if joins.exists() {
            load_join_pairs(&joins, &columns)?
        } else {
            Vec::new()
        };
        let queries_path = root.join("queries.csv");
        let queries = if queries_path.exists() {
            load_queries(&queries_path, &columns)?
        } else {
            Vec::new()
        };
        Ok(Self {
            root: root.to_path_buf(),
            tables,
            columns,
            pairs,
            queries,
        })
    }

    pub fn train_pairs(&self) -> Vec<JoinPair> {
        self.pairs
            .iter()
            .copied()
            .filter(|p| p.split == Split::Train)
            .collect()
    }

    /// Ground truth for a query: every column paired with it, any split.
    pub fn truth(&self) -> HashMap<usize, HashSet<usize>> {
        let mut out: HashMap<usize, HashSet<usize>> = HashMap::new();
        for p in &self.pairs {
            out.entry(p.left).or_default().insert(p.right);
            out.entry(p.right).or_default().insert(p.left);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn write_lake(dir: &Path, tables: &[(&str, &str)]) {
        fs::create_dir_all(dir.join("tables")).unwrap();
        let manifest = Manifest {
            tables: tables
                .iter()
                .map(|(id, _)| ManifestEntry {
                    id: id.to_string(),
                    file: format!("tables/{id}.csv"),
                    title: format!("{id} title"),
                    key: None,
                })
                .collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
        for (id, body) in tables {
            fs::write(dir.join(format!("tables/{id}.csv")), body).unwrap();
        }
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_lake(dir.path(), &[]);
        let repo = ingest_lake(dir.path()).unwrap();
        assert!(repo.tables.is_empty());
        assert!(extract_columns(&repo).is_empty());
    }

    #[test]
    fn dense_ids_in_manifest_then_column_order() {
        let dir = tempfile::tempdir().unwrap();
        write_lake(
            dir.path(),
            &[
                ("a", "x,y,z\np,q,r\ns,t,u\n"),
                ("b", "c1,c2,c3,c4\nk,l,m,n\n"),
            ],
        );
        let cols = extract_columns(&ingest_lake(dir.path()).unwrap());
        assert_eq!(cols.len(), 7);
        let ids: Vec<usize> = cols.columns.iter().map(|c| c.column_id).collect();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
        assert_eq!(cols.columns[3].table_id, "b");
        assert_eq!(cols.columns[3].name, "c1");
    }

    #[test]
    fn ragged_row_names_table_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("a,b\n");
        for i in 0..5 {
            body.push_str(&format!("x{i},y{i}\n"));
        }
        body.push_str("only\n");
        write_lake(dir.path(), &[("t1", &body)]);
        match ingest_lake(dir.path()) {
            Err(LakeError::RaggedRow { table_id, row, .. }) => {
                assert_eq!(table_id, "t1");
                assert_eq!(row, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_lake(dir.path(), &[("t", "a\nx\n"), ("t", "a\nx\n")]);
        assert!(matches!(ingest_lake(dir.path()), Err(LakeError::DuplicateTable(_))));
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_lake(dir.path(), &[("t", "a\nx\n")]);
        fs::remove_file(dir.path().join("tables/t.csv")).unwrap();
        assert!(matches!(ingest_lake(dir.path()), Err(LakeError::Io { .. })));
    }

    #[test]
    fn cleaning_rules() {
        assert_eq!(clean_column(&["NY", "NY", "LA"]).unwrap(), vec!["NY", "LA"]);
        assert_eq!(clean_column(&["", "  ", "x"]).unwrap(), vec!["x"]);
        assert_eq!(clean_column(&["  a   b "]).unwrap(), vec!["a b"]);
        assert!(clean_column(&["1", "2.5", "3,000", "4"]).is_none());
        // 3 of 4 numeric is below the 80% rule
        assert!(clean_column(&["1", "2", "3", "abc"]).is_some());
        assert!(clean_column(&["1", "2", "3", "4", "abc"]).is_none());
        assert!(clean_column::<&str>(&[]).is_none());
        assert!(clean_column(&["A17", "B22"]).is_some());
    }

    #[test]
    fn join_pairs_are_canonical() {
        let p = JoinPair::new(7, 3, Split::Train).unwrap();
        assert_eq!((p.left, p.right, p.split), (3, 7, Split::Train));
        assert!(matches!(JoinPair::new(5, 5, Split::Test), Err(LakeError::SelfPair(5))));
    }

    #[test]
    fn join_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        write_lake(dir.path(), &[("a", "k,v\nx,y\n"), ("b", "k\nx\n")]);
        let cols = extract_columns(&ingest_lake(dir.path()).unwrap());
        let path = dir.path().join("joins.csv");
        fs::write(
            &path,
            "left_table,left_column,right_table,right_column,split\nb,k,a,k,train\na,k,b,k,train\n",
        )
        .unwrap();
        let pairs = load_join_pairs(&path, &cols).unwrap();
        assert_eq!(pairs, vec![JoinPair::new(0, 2, Split::Train).unwrap()]);

        fs::write(
            &path,
            "left_table,left_column,right_table,right_column,split\na,k,b,k,test\na,zz,b,k,test\n",
        )
        .unwrap();
        match load_join_pairs(&path, &cols) {
            Err(LakeError::UnknownColumn { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }

        fs::write(
            &path,
            "left_table,left_column,right_table,right_column,split\na,k,a,k,test\n",
        )
        .unwrap();
        let err = load_join_pairs(&path, &cols).unwrap_err();
        assert!(err.to_string().contains("self-join pair"));
    }

    #[test]
    fn ingestion_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_lake(dir.path(), &[("a", "k,v\nx,1\ny,2\n"), ("b", "k,w\nx,p\n")]);
        let one = extract_columns(&ingest_lake(dir.path()).unwrap());
        let two = extract_columns(&ingest_lake(dir.path()).unwrap());
        assert_eq!(one, two);
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(cells in prop::collection::vec("[ a-c0-9]{0,6}", 0..20)) {
            if let Some(once) = clean_column(&cells) {
                prop_assert_eq!(clean_column(&once), Some(once.clone()));
            }
        }
    }
}
