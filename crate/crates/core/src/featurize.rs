//! Initial column features: a name embedding plus a projected content
//! embedding, summed elementwise.
//!
//! Names (table title and column name) are tokenized and mean-pooled over a
//! learnable token table. Cells are embedded with word vectors (or a
//! character-trigram hashing fallback), averaged per cell then per column,
//! and projected through a two-layer ReLU network with dropout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::rc::Rc;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::lake::ColumnRepo;
use crate::params::{join, Dropout, Init, Linear, ParamTree};

pub const UNKNOWN_TOKEN: usize = 0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizerConfig {
    /// Embedding dimension shared with the HIN.
    pub dim: usize,
    /// Hidden width of the content projection.
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_cells: usize,
    /// Word-vector width when no word-vector file is given.
    pub hash_dim: usize,
    pub word_vectors: Option<std::path::PathBuf>,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            hidden_dim: 512,
            vocab_size: 1500,
            max_cells: crate::lake::DEFAULT_MAX_FEATURE_CELLS,
            hash_dim: 64,
            word_vectors: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeaturizeError {
    #[error("i/o error reading word vectors {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("word vectors line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Lowercased tokens split on non-alphanumerics and camelCase boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let lower_to_upper = cur.is_uppercase() && (prev.is_lowercase() || prev.is_numeric());
            let acronym_end = cur.is_uppercase()
                && prev.is_uppercase()
                && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if lower_to_upper || acronym_end {
                tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            tokens.push(chars[start..].iter().collect::<String>().to_lowercase());
        }
    }
    tokens
}

/// Name-token vocabulary; index 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// The `max_size - 1` most frequent tokens (ties by token) plus `<unk>`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec!["<unk>".to_string()];
        tokens.extend(ranked.into_iter().take(max_size.saturating_sub(1)).map(|(t, _)| t));
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { index, tokens }
    }

    /// Vocabulary over every table title and column name in the repository.
    pub fn from_repo(repo: &ColumnRepo, max_size: usize) -> Self {
        let texts = repo
            .columns
            .iter()
            .flat_map(|c| [repo.tables[c.table_index].title.as_str(), c.name.as_str()]);
        Self::build(texts, max_size)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN_TOKEN)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Token ids for a table title plus column name; never empty.
    pub fn encode(&self, title: &str, name: &str) -> Vec<usize> {
        let ids: Vec<usize> = tokenize(title)
            .iter()
            .chain(tokenize(name).iter())
            .map(|t| self.id(t))
            .collect();
        if ids.is_empty() {
            vec![UNKNOWN_TOKEN]
        } else {
            ids
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed character-trigram hashing of `<token>` into `dim` buckets,
/// L2-normalized.
pub fn hash_vector(token: &str, dim: usize) -> Array1<f64> {
    let padded: Vec<char> = format!("<{token}>").chars().collect();
    let mut v: Array1<f64> = Array1::zeros(dim);
    for gram in padded.windows(3) {
        let s: String = gram.iter().collect();
        let h = fnv1a(s.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}

/// Word-vector table with a total lookup through the hashing fallback.
#[derive(Debug, Clone, Default)]
pub struct WordVectors {
    dim: usize,
    table: HashMap<String, Array1<f64>>,
}

impl WordVectors {
    pub fn hashing(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn from_map(dim: usize, table: HashMap<String, Vec<f64>>) -> Self {
        let table = table
            .into_iter()
            .map(|(k, v)| {
                assert_eq!(v.len(), dim, "word vector for {k} has wrong dimension");
                (k, Array1::from(v))
            })
            .collect();
        Self { dim, table }
    }

    /// Text format: `token v1 v2 ... v_d` per line.
    pub fn load(path: &Path) -> Result<Self, FeaturizeError> {
        let io = |source| FeaturizeError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut dim = None;
        let mut table = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| FeaturizeError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| FeaturizeError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected || expected == 0 {
                return Err(FeaturizeError::Parse {
                    line: i + 1,
                    reason: format!("expected {expected} values, found {}", values.len()),
                });
            }
            table.insert(token.to_lowercase(), Array1::from(values));
        }
        Ok(Self {
            dim: dim.unwrap_or(300),
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, token: &str) -> Array1<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => hash_vector(token, self.dim),
        }
    }

    /// Mean of the cell's token vectors; a token-less cell hashes whole.
    pub fn cell_vector(&self, cell: &str) -> Array1<f64> {
        let tokens = tokenize(cell);
        if tokens.is_empty() {
            return hash_vector(cell, self.dim);
        }
        let mut acc = Array1::zeros(self.dim);
        for t in &tokens {
            acc += &self.lookup(t);
        }
        acc / tokens.len() as f64
    }

    /// Mean of cell vectors over `cells`.
    pub fn pool_cells<S: AsRef<str>>(&self, cells: &[S]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        for c in cells {
            acc += &self.cell_vector(c.as_ref());
        }
        if !cells.is_empty() {
            acc /= cells.len() as f64;
        }
        acc
    }
}

/// Fixed per-column inputs to the featurizer.
#[derive(Debug, Clone)]
pub struct FeatureInputs {
    /// Name token ids per column.
    pub name_tokens: Rc<Vec<Vec<usize>>>,
    /// Pooled cell word vectors, `N × d_w`.
    pub content: Mat,
}

impl FeatureInputs {
    pub fn build(repo: &ColumnRepo, vocab: &Vocab, words: &WordVectors, max_cells: usize) -> Self {
        let name_tokens = repo
            .columns
            .iter()
            .map(|c| vocab.encode(&repo.tables[c.table_index].title, &c.name))
            .collect();
        let mut content = Mat::zeros((repo.len(), words.dim()));
        for (i, c) in repo.columns.iter().enumerate() {
            content.row_mut(i).assign(&words.pool_cells(c.feature_cells(max_cells)));
        }
        Self {
            name_tokens: Rc::new(name_tokens),
            content,
        }
    }

    pub fn len(&self) -> usize {
        self.name_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.name_tokens.is_empty()
    }

    /// Rows reordered so new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            name_tokens: Rc::new(order.iter().map(|&o| self.name_tokens[o].clone()).collect()),
            content: self.content.select(ndarray::Axis(0), order),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizerParams<T = Mat> {
    /// `V × d` token table.
    pub token_emb: T,
    /// `d_w → d_h`.
    pub hidden: Linear<T>,
    /// `d_h → d`.
    pub out: Linear<T>,
}

impl<T> ParamTree<T> for FeaturizerParams<T> {
    type Mapped<U> = FeaturizerParams<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> FeaturizerParams<U> {
        FeaturizerParams {
            token_emb: f(&join(prefix, "token_emb"), &self.token_emb),
            hidden: self.hidden.map_params(&join(prefix, "hidden"), f),
            out: self.out.map_params(&join(prefix, "out"), f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "token_emb"), &mut self.token_emb);
        self.hidden.visit_params_mut(&join(prefix, "hidden"), f);
        self.out.visit_params_mut(&join(prefix, "out"), f);
    }
}

impl FeaturizerParams<Mat> {
    pub fn init(init: &mut Init<'_>, vocab_size: usize, word_dim: usize, hidden: usize, dim: usize) -> Self {
        Self {
            token_emb: init.uniform(vocab_size, dim, 0.1),
            hidden: init.linear(word_dim, hidden),
            out: init.linear(hidden, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.token_emb.ncols()
    }
}

/// Name vectors for every column: mean of token embedding rows.
pub fn name_vectors(tape: &mut Tape, p: &FeaturizerParams<Var>, inputs: &FeatureInputs) -> Var {
    tape.segment_mean(p.token_emb, inputs.name_tokens.clone())
}

/// Projects pooled content vectors: `out(dropout(relu(hidden(x))))`.
pub fn content_vectors(
    tape: &mut Tape,
    p: &FeaturizerParams<Var>,
    content: Var,
    dropout: &mut Dropout,
) -> Var {
    let h = p.hidden.apply(tape, content);
    let h = tape.relu(h);
    let h = dropout.apply(tape, h);
    p.out.apply(tape, h)
}

/// `X^v`: name vector plus content vector for every column (`N × d`).
pub fn featurize(
    tape: &mut Tape,
    p: &FeaturizerParams<Var>,
    inputs: &FeatureInputs,
    dropout: &mut Dropout,
) -> Var {
    let names = name_vectors(tape, p, inputs);
    let content = tape.constant(inputs.content.clone());
    let content = content_vectors(tape, p, content, dropout);
    tape.add(names, content)
}

/// Bundles what's needed to featurize arbitrary columns outside a lake.
pub struct Featurizer<'a> {
    pub params: &'a FeaturizerParams<Mat>,
    pub vocab: &'a Vocab,
    pub words: &'a WordVectors,
    pub max_cells: usize,
}

impl Featurizer<'_> {
    /// Eval-mode name embedding.
    pub fn encode_name(&self, table_title: &str, column_name: &str) -> Array1<f64> {
        let ids = self.vocab.encode(table_title, column_name);
        let mut acc = Array1::zeros(self.params.dim());
        for &id in &ids {
            acc += &self.params.token_emb.row(id);
        }
        acc / ids.len() as f64
    }

    /// Eval-mode content embedding of (the first `max_cells` of) `cells`.
    pub fn encode_content<S: AsRef<str>>(&self, cells: &[S]) -> Array1<f64> {
        let cells = &cells[..cells.len().min(self.max_cells)];
        let pooled = self.words.pool_cells(cells);
        let mut tape = Tape::new();
        let p = crate::params::bind(self.params, &mut tape);
        let x = tape.constant(pooled.insert_axis(ndarray::Axis(0)));
        let y = content_vectors(&mut tape, &p, x, &mut Dropout::eval());
        tape.value(y).row(0).to_owned()
    }

    pub fn initial_column_features<S: AsRef<str>>(
        &self,
        table_title: &str,
        column_name: &str,
        cells: &[S],
    ) -> Array1<f64> {
        self.encode_name(table_title, column_name) + self.encode_content(cells)
    }
}
