//! Online search: top-B retrieval, the candidate graph, the
//! relevance-plus-coherence objective, greedy selection and the exact
//! oracles used to check it.
//!
//! Vertex 0 of a candidate graph is always the query; vertex `i >= 1` is
//! `candidates[i - 1]`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::featurize::WordVectors;
use crate::lake::{normalize_cell, ColumnRepo};

pub const WEIGHT_FLOOR: f64 = 1e-12;
pub const DEFAULT_BRUTE_FORCE_GUARD: u64 = 1_000_000;
pub const GUARANTEE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Candidate pool size.
    pub b: usize,
    /// Weight of coherence in the objective.
    pub lambda: f64,
    pub k: usize,
    /// Greedy coherent reranking; off means plain top-K by similarity.
    pub rerank: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            b: 50,
            lambda: 1.0,
            k: 15,
            rerank: true,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SearchError {
    #[error("query column is empty")]
    EmptyQuery,
    #[error("greedy selection needs a complete candidate graph; edge ({0}, {1}) is missing")]
    Incomplete(usize, usize),
    #[error("brute force would evaluate {needed} subsets, above the guard of {guard}")]
    GuardExceeded { needed: u64, guard: u64 },
    #[error("query column {0} out of range")]
    UnknownColumn(usize),
}

#[derive(Debug, Clone, Copy)]
pub enum SimMode<'a> {
    /// 1 if the normalized cells are equal ignoring case, else 0.
    Exact,
    /// Cosine of cell vectors, clamped to [0, 1].
    Embedding(&'a WordVectors),
}

/// Mean over query cells of the best similarity to any target cell.
pub fn pairwise_joinability<S: AsRef<str>>(query: &[S], target: &[S], mode: SimMode<'_>) -> Result<f64, SearchError> {
    if query.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let total: f64 = match mode {
        SimMode::Exact => {
            let key = |c: &str| normalize_cell(c).to_lowercase();
            let set: HashSet<String> = target.iter().map(|c| key(c.as_ref())).collect();
            query
                .iter()
                .filter(|c| set.contains(&key(c.as_ref())))
                .count() as f64
        }
        SimMode::Embedding(words) => {
            let unit = |c: &str| {
                let v = words.cell_vector(c);
                let n = v.dot(&v).sqrt();
                if n > 0.0 {
                    v / n
                } else {
                    v
                }
            };
            let targets: Vec<_> = target.iter().map(|c| unit(c.as_ref())).collect();
            query
                .iter()
                .map(|q| {
                    let qv = unit(q.as_ref());
                    targets.iter().map(|t| qv.dot(t).clamp(0.0, 1.0)).fold(0.0, f64::max)
                })
                .sum()
        }
    };
    Ok(total / query.len() as f64)
}

/// `(1 + cos) / 2`, floored at [`WEIGHT_FLOOR`].
pub fn weight_from_cosine(cos: f64) -> f64 {
    ((1.0 + cos) / 2.0).max(WEIGHT_FLOOR)
}

pub fn edge_weight(a: &[f64], b: &[f64]) -> f64 {
    weight_from_cosine(cosine(a, b))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    id: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    /// Greater = better: higher similarity, then lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `b` columns most similar (by dot product of unit embeddings) to the
/// query, excluding the query's own table; best first, ties to lower id.
pub fn top_b(query: usize, embeddings: &Mat, table_of: &[usize], b: usize) -> Vec<(usize, f64)> {
    let q = embeddings.row(query);
    let mut heap: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::with_capacity(b + 1);
    let mut eligible = 0;
    for (id, row) in embeddings.rows().into_iter().enumerate() {
        if table_of[id] == table_of[query] {
            continue;
        }
        eligible += 1;
        let s = Scored { sim: q.dot(&row), id };
        if heap.len() < b {
            heap.push(std::cmp::Reverse(s));
        } else if let Some(worst) = heap.peek() {
            if s > worst.0 {
                heap.pop();
                heap.push(std::cmp::Reverse(s));
            }
        }
    }
    if eligible < b {
        log::warn!("only {eligible} eligible candidates for query {query}, fewer than B = {b}");
    }
    let mut out: Vec<Scored> = heap.into_iter().map(|r| r.0).collect();
    out.sort_by(|a, b| b.cmp(a));
    out.into_iter().map(|s| (s.id, s.sim)).collect()
}

/// Weighted graph over the query (vertex 0) and its candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    /// Column id per vertex; entry 0 is the query.
    pub ids: Vec<usize>,
    /// Symmetric weights; entries of absent edges are ignored.
    pub weights: Mat,
    pub present: ndarray::Array2<bool>,
    /// Query relevance per vertex (entry 0 unused).
    pub relevance: Vec<f64>,
}

impl CandidateGraph {
    /// Complete graph with relevance `w(q, c)`.
    pub fn complete(ids: Vec<usize>, weights: Mat) -> Self {
        let n = ids.len();
        assert_eq!(weights.dim(), (n, n), "weight matrix must match vertex count");
        let mut present = ndarray::Array2::from_elem((n, n), true);
        for i in 0..n {
            present[[i, i]] = false;
        }
        let relevance = (0..n).map(|v| if v == 0 { 0.0 } else { weights[[0, v]] }).collect();
        Self {
            ids,
            weights,
            present,
            relevance,
        }
    }

    /// Complete graph over the query and candidates from their embeddings.
    pub fn build(query: usize, candidates: &[usize], embeddings: &Mat) -> Self {
        let ids: Vec<usize> = std::iter::once(query).chain(candidates.iter().copied()).collect();
        let n = ids.len();
        let rows: Vec<Vec<f64>> = ids.iter().map(|&c| embeddings.row(c).to_vec()).collect();
        let mut w = Mat::zeros((n, n));
        for i in 0..n {
            w[[i, i]] = 1.0;
            for j in (i + 1)..n {
                let x = edge_weight(&rows[i], &rows[j]);
                w[[i, j]] = x;
                w[[j, i]] = x;
            }
        }
        Self::complete(ids, w)
    }

    /// Number of candidates `B`.
    pub fn b(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count() / 2
    }

    pub fn w(&self, i: usize, j: usize) -> Option<f64> {
        self.present[[i, j]].then(|| self.weights[[i, j]])
    }

    pub fn is_complete(&self) -> bool {
        let n = self.ids.len();
        (0..n).all(|i| (0..n).all(|j| i == j || self.present[[i, j]]))
    }
}

/// Maximum spanning tree weight over `{query} ∪ vertices`, restricted to the
/// component of the query when the induced graph is disconnected.
pub fn coherence(g: &CandidateGraph, vertices: &[usize]) -> f64 {
    let mut nodes = Vec::with_capacity(vertices.len() + 1);
    nodes.push(0);
    nodes.extend(vertices.iter().copied().filter(|&v| v != 0));
    let n = nodes.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    in_tree[0] = true;
    for j in 1..n {
        if let Some(w) = g.w(0, nodes[j]) {
            best[j] = w;
        }
    }
    let mut total = 0.0;
    for _ in 1..n {
        let mut pick = None;
        for j in 1..n {
            if !in_tree[j] && best[j] > f64::NEG_INFINITY && pick.is_none_or(|p: usize| best[j] > best[p]) {
                pick = Some(j);
            }
        }
        let Some(p) = pick else { break };
        in_tree[p] = true;
        total += best[p];
        for j in 1..n {
            if !in_tree[j] {
                if let Some(w) = g.w(nodes[p], nodes[j]) {
                    if w > best[j] {
                        best[j] = w;
                    }
                }
            }
        }
    }
    total
}

/// `Σ relevance + λ · coherence`.
pub fn objective(g: &CandidateGraph, vertices: &[usize], lambda: f64) -> f64 {
    let rel: f64 = vertices.iter().map(|&v| g.relevance[v]).sum();
    rel + lambda * coherence(g, vertices)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    /// Selected vertices in selection order.
    pub selected: Vec<usize>,
    /// Marginal gain `rel + λ·key` at selection.
    pub gains: Vec<f64>,
    /// Vertex each selection attached to (0 = the query).
    pub attachments: Vec<usize>,
    /// Attachment weights.
    pub attachment_weights: Vec<f64>,
    pub objective: f64,
}

/// Greedy maximization of the objective with the Prim-style surrogate gain.
pub fn greedy_select(g: &CandidateGraph, k: usize, lambda: f64) -> Result<ResultSet, SearchError> {
    let n = g.ids.len();
    for i in 0..n {
        for j in 0..n {
            if i != j && !g.present[[i, j]] {
                return Err(SearchError::Incomplete(i.min(j), i.max(j)));
            }
        }
    }
    let b = n - 1;
    let k = if k > b {
        log::warn!("K = {k} exceeds the {b} candidates; returning all");
        b
    } else {
        k
    };
    let rel = &g.relevance;
    let mut key: Vec<f64> = (0..n).map(|v| if v == 0 { 0.0 } else { g.weights[[0, v]] }).collect();
    let mut attach = vec![0usize; n];
    let mut used = vec![false; n];
    used[0] = true;
    let mut out = ResultSet {
        selected: Vec::with_capacity(k),
        gains: Vec::with_capacity(k),
        attachments: Vec::with_capacity(k),
        attachment_weights: Vec::with_capacity(k),
        objective: 0.0,
    };
    for _ in 0..k {
        let mut pick: Option<(f64, usize)> = None;
        for v in 1..n {
            if used[v] {
                continue;
            }
            let gain = rel[v] + lambda * key[v];
            let better = match pick {
                None => true,
                Some((bg, bv)) => gain > bg || (gain == bg && g.ids[v] < g.ids[bv]),
            };
            if better {
                pick = Some((gain, v));
            }
        }
        let (gain, v) = pick.expect("k <= b leaves a candidate");
        used[v] = true;
        out.selected.push(v);
        out.gains.push(gain);
        out.attachments.push(attach[v]);
        out.attachment_weights.push(key[v]);
        for c in 1..n {
            if !used[c] && g.weights[[c, v]] > key[c] {
                key[c] = g.weights[[c, v]];
                attach[c] = v;
            }
        }
    }
    out.objective = objective(g, &out.selected, lambda);
    Ok(out)
}

/// Groups of vertices with identical relevance and identical weights to
/// every other vertex; members of a group are interchangeable.
fn twin_classes(g: &CandidateGraph) -> Vec<Vec<usize>> {
    let n = g.ids.len();
    let twins = |a: usize, b: usize| {
        g.relevance[a] == g.relevance[b]
            && (0..n).filter(|&k| k != a && k != b).all(|k| {
                g.present[[a, k]] == g.present[[b, k]] && (!g.present[[a, k]] || g.weights[[a, k]] == g.weights[[b, k]])
            })
    };
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for v in 1..n {
        match classes.iter_mut().find(|c| twins(c[0], v)) {
            Some(c) => c.push(v),
            None => classes.push(vec![v]),
        }
    }
    classes
}

/// Number of count vectors `c` with `c_i <= sizes[i]` and `Σ c = k`.
fn count_compositions(sizes: &[usize], k: usize, guard: u64) -> u64 {
    // dp[j] = ways to reach total j; saturates just above the guard
    let cap = guard.saturating_add(1);
    let mut dp = vec![0u64; k + 1];
    dp[0] = 1;
    for &s in sizes {
        let mut next = vec![0u64; k + 1];
        for (j, &ways) in dp.iter().enumerate() {
            if ways == 0 {
                continue;
            }
            for c in 0..=s.min(k - j) {
                next[j + c] = next[j + c].saturating_add(ways).min(cap);
            }
        }
        dp = next;
    }
    dp[k]
}

fn lex_less(a: &[usize], b: &[usize]) -> bool {
    a < b
}

/// Exhaustive maximization of the objective over all `k`-subsets.
/// Interchangeable vertices are enumerated once per multiplicity, and
/// among optimal sets the lexicographically smallest (sorted vertex list)
/// is returned. Refuses when more than `guard` subsets would be evaluated.
pub fn brute_force_select(
    g: &CandidateGraph,
    k: usize,
    lambda: f64,
    guard: u64,
) -> Result<(Vec<usize>, f64), SearchError> {
    let k = k.min(g.b());
    let classes = twin_classes(g);
    let sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
    let needed = count_compositions(&sizes, k, guard);
    if needed > guard {
        return Err(SearchError::GuardExceeded { needed, guard });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut counts = vec![0usize; classes.len()];
    fn rec(
        i: usize,
        left: usize,
        counts: &mut Vec<usize>,
        classes: &[Vec<usize>],
        sizes: &[usize],
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if i == classes.len() {
            if left == 0 {
                visit(counts);
            }
            return;
        }
        let rest: usize = sizes[i + 1..].iter().sum();
        let lo = left.saturating_sub(rest);
        for c in (lo..=sizes[i].min(left)).rev() {
            counts[i] = c;
            rec(i + 1, left - c, counts, classes, sizes, visit);
        }
        counts[i] = 0;
    }
    let mut visit = |counts: &[usize]| {
        let mut set: Vec<usize> = classes
            .iter()
            .zip(counts)
            .flat_map(|(cls, &c)| cls[..c].iter().copied())
            .collect();
        set.sort_unstable();
        let val = objective(g, &set, lambda);
        let replace = match &best {
            None => true,
            Some((bv, bs)) => val > *bv || (val == *bv && lex_less(&set, bs)),
        };
        if replace {
            best = Some((val, set));
        }
    };
    rec(0, k, &mut counts, &classes, &sizes, &mut visit);
    let (val, set) = best.unwrap_or((0.0, Vec::new()));
    Ok((set, val))
}

/// Worst slacks of the three greedy guarantees (negative = violated).
#[derive(Debug, Clone, PartialEq)]
pub struct GuaranteeReport {
    /// Min over steps of `G(R_t) - G(R_{t-1}) - Δ_t`.
    pub step_gain_slack: f64,
    /// Min over steps of `MST(S ∪ {v}) - MST(S) - max_u w(v, u)`.
    pub growth_slack: f64,
    /// `coherence(R) - Σ attachment weights`.
    pub tree_slack: f64,
    /// Whether `G` never decreased along the trajectory.
    pub monotone: bool,
    /// Whether the attachment edges form a spanning tree of `{q} ∪ R`.
    pub attachment_tree: bool,
}

impl GuaranteeReport {
    pub fn passed(&self) -> bool {
        self.step_gain_slack >= -GUARANTEE_TOL
            && self.growth_slack >= -GUARANTEE_TOL
            && self.tree_slack >= -GUARANTEE_TOL
            && self.monotone
            && self.attachment_tree
    }
}

/// `MST(S ∪ {v}) - MST(S) - max_{u ∈ S} w(v, u)`, where `S` holds the query
/// plus `set`.
pub fn growth_slack(g: &CandidateGraph, set: &[usize], v: usize) -> f64 {
    let mut with: Vec<usize> = set.to_vec();
    with.push(v);
    let best = std::iter::once(0)
        .chain(set.iter().copied())
        .filter_map(|u| g.w(v, u))
        .fold(f64::NEG_INFINITY, f64::max);
    coherence(g, &with) - coherence(g, set) - best
}

/// Checks a greedy run against exact recomputation.
pub fn check_guarantees(g: &CandidateGraph, r: &ResultSet, lambda: f64) -> GuaranteeReport {
    let mut report = GuaranteeReport {
        step_gain_slack: f64::INFINITY,
        growth_slack: f64::INFINITY,
        tree_slack: 0.0,
        monotone: true,
        attachment_tree: true,
    };
    let mut prev = 0.0;
    for t in 0..r.selected.len() {
        let before = &r.selected[..t];
        let after = &r.selected[..=t];
        let g_after = objective(g, after, lambda);
        report.step_gain_slack = report.step_gain_slack.min(g_after - prev - r.gains[t]);
        report.growth_slack = report.growth_slack.min(growth_slack(g, before, r.selected[t]));
        if g_after < prev {
            report.monotone = false;
        }
        // each attachment goes to a vertex already in the tree
        let a = r.attachments[t];
        if a != 0 && !before.contains(&a) {
            report.attachment_tree = false;
        }
        prev = g_after;
    }
    let attached: f64 = r.attachment_weights.iter().sum();
    report.tree_slack = coherence(g, &r.selected) - attached;
    report
}

/// 0-1 knapsack with integer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    /// `(weight, value)` per item; weights are at least 1.
    pub items: Vec<(usize, f64)>,
    pub capacity: usize,
}

/// Selection instance whose optimum equals the knapsack optimum.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub graph: CandidateGraph,
    pub k: usize,
    pub lambda: f64,
    /// Path vertices per item, in path order.
    pub paths: Vec<Vec<usize>>,
    pub dummies: Vec<usize>,
}

/// Item `i` becomes a path `q - u1 - ... - u_w` whose only nonzero edge is
/// the last one (value `v_i`; for `w = 1` the edge `(q, u1)`), plus
/// `capacity` zero-weight dummies on the query. Relevance is zero, λ = 1
/// and exactly `capacity` vertices are selected.
pub fn knapsack_reduction(inst: &KnapsackInstance) -> Reduction {
    let path_nodes: usize = inst.items.iter().map(|&(w, _)| w).sum();
    let n = 1 + path_nodes + inst.capacity;
    let mut weights = Mat::zeros((n, n));
    let mut present = ndarray::Array2::from_elem((n, n), false);
    let mut link = |a: usize, b: usize, w: f64| {
        weights[[a, b]] = w;
        weights[[b, a]] = w;
        present[[a, b]] = true;
        present[[b, a]] = true;
    };
    let mut next = 1;
    let mut paths = Vec::new();
    for &(w, v) in &inst.items {
        assert!(w >= 1, "knapsack weights must be positive");
        let path: Vec<usize> = (next..next + w).collect();
        next += w;
        link(0, path[0], if w == 1 { v } else { 0.0 });
        for (j, pair) in path.windows(2).enumerate() {
            let last = j + 2 == w;
            link(pair[0], pair[1], if last { v } else { 0.0 });
        }
        paths.push(path);
    }
    let dummies: Vec<usize> = (next..n).collect();
    for &d in &dummies {
        link(0, d, 0.0);
    }
    Reduction {
        graph: CandidateGraph {
            ids: (0..n).collect(),
            weights,
            present,
            relevance: vec![0.0; n],
        },
        k: inst.capacity,
        lambda: 1.0,
        paths,
        dummies,
    }
}

/// One ranked result row.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub rank: usize,
    pub column: usize,
    pub relevance: f64,
    pub marginal_gain: f64,
    /// Column the result attached to; `None` when attached to the query or
    /// when reranking is off.
    pub attachment: Option<usize>,
}

/// Top-B retrieval followed by greedy reranking (or plain top-K).
pub fn run_query(
    query: usize,
    embeddings: &Mat,
    table_of: &[usize],
    cfg: &SearchConfig,
) -> Result<Vec<QueryRow>, SearchError> {
    if query >= embeddings.nrows() {
        return Err(SearchError::UnknownColumn(query));
    }
    let pool = top_b(query, embeddings, table_of, cfg.b.max(cfg.k));
    if !cfg.rerank {
        return Ok(pool
            .iter()
            .take(cfg.k)
            .enumerate()
            .map(|(i, &(c, sim))| {
                let w = weight_from_cosine(sim);
                QueryRow {
                    rank: i + 1,
                    column: c,
                    relevance: w,
                    marginal_gain: w,
                    attachment: None,
                }
            })
            .collect());
    }
    let candidates: Vec<usize> = pool.iter().map(|&(c, _)| c).collect();
    let g = CandidateGraph::build(query, &candidates, embeddings);
    let r = greedy_select(&g, cfg.k, cfg.lambda)?;
    Ok(r.selected
        .iter()
        .enumerate()
        .map(|(i, &v)| QueryRow {
            rank: i + 1,
            column: g.ids[v],
            relevance: g.relevance[v],
            marginal_gain: r.gains[i],
            attachment: (r.attachments[i] != 0).then(|| g.ids[r.attachments[i]]),
        })
        .collect())
}

/// CSV `query,rank,table,column,relevance,marginal_gain,attachment_to`.
pub fn write_results<W: Write>(out: W, repo: &ColumnRepo, query: usize, rows: &[QueryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query", "rank", "table", "column", "relevance", "marginal_gain", "attachment_to"])?;
    let label = |c: usize| format!("{}.{}", repo.columns[c].table_id, repo.columns[c].name);
    for r in rows {
        let col = &repo.columns[r.column];
        w.write_record([
            label(query),
            r.rank.to_string(),
            col.table_id.clone(),
            col.name.clone(),
            format!("{:.9}", r.relevance),
            format!("{:.9}", r.marginal_gain),
            r.attachment.map(label).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
