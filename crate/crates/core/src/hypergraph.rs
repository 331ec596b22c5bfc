//! Column hypergraph: one intra-table hyperedge per table, one inter-table
//! hyperedge per multi-column join-key entity, plus the Laplacian
//! positional basis of the train join graph.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::augment::EntityPartition;
use crate::autodiff::Mat;
use crate::lake::{ColumnRepo, JoinPair, Split};

pub const DEFAULT_PE_DIM: usize = 16;
/// Beyond this many nodes the dense eigensolver gets slow (cubic).
pub const DENSE_EIGEN_WARN: usize = 5000;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum HypergraphError {
    #[error("node {0} belongs to no hyperedge")]
    IsolatedNode(usize),
    #[error("hyperedge {0} is empty")]
    EmptyEdge(usize),
    #[error("hyperedge member {member} out of range for {n} nodes")]
    MemberOutOfRange { member: usize, n: usize },
    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("adjacency matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("eigen-decomposition did not converge")]
    NoConvergence,
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Inter,
    Intra,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Inter => "inter",
            EdgeKind::Intra => "intra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperedge {
    pub edge_id: usize,
    pub kind: EdgeKind,
    /// Sorted, distinct node ids.
    pub members: Vec<usize>,
}

/// Immutable hypergraph over columns `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    pub n: usize,
    pub edges: Vec<Hyperedge>,
    /// Incident edge ids per node, ascending.
    pub node_edges: Vec<Vec<usize>>,
    /// Table index per node.
    pub table_of: Vec<usize>,
    pub num_tables: usize,
}

/// Members of the intra-table edge of every table, in table order. Tables
/// without columns get no edge.
pub fn build_intra_edges(repo: &ColumnRepo) -> Vec<Vec<usize>> {
    let mut edges = vec![Vec::new(); repo.table_count()];
    for c in &repo.columns {
        edges[c.table_index].push(c.column_id);
    }
    edges.retain(|e| !e.is_empty());
    edges
}

/// One edge per entity component with at least two columns.
pub fn build_inter_edges(partition: &EntityPartition) -> Vec<Vec<usize>> {
    partition
        .components
        .iter()
        .filter(|c| c.len() >= 2)
        .cloned()
        .collect()
}

impl Hypergraph {
    /// Edge ids go to inter edges first, then intra edges, each family in
    /// the given order.
    pub fn assemble(
        n: usize,
        table_of: Vec<usize>,
        intra: Vec<Vec<usize>>,
        inter: Vec<Vec<usize>>,
    ) -> Result<Self, HypergraphError> {
        assert_eq!(table_of.len(), n, "table_of must have one entry per node");
        let num_tables = table_of.iter().map(|&t| t + 1).max().unwrap_or(0);
        let mut edges = Vec::with_capacity(intra.len() + inter.len());
        let tagged = inter
            .into_iter()
            .map(|m| (EdgeKind::Inter, m))
            .chain(intra.into_iter().map(|m| (EdgeKind::Intra, m)));
        for (edge_id, (kind, mut members)) in tagged.enumerate() {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(HypergraphError::EmptyEdge(edge_id));
            }
            if let Some(&m) = members.iter().find(|&&m| m >= n) {
                return Err(HypergraphError::MemberOutOfRange { member: m, n });
            }
            edges.push(Hyperedge {
                edge_id,
                kind,
                members,
            });
        }
        let mut node_edges = vec![Vec::new(); n];
        for e in &edges {
            for &m in &e.members {
                node_edges[m].push(e.edge_id);
            }
        }
        if let Some(v) = node_edges.iter().position(Vec::is_empty) {
            return Err(HypergraphError::IsolatedNode(v));
        }
        Ok(Self {
            n,
            edges,
            node_edges,
            table_of,
            num_tables,
        })
    }

    /// The full construction from a column repository and entity partition.
    pub fn from_repo(repo: &ColumnRepo, partition: &EntityPartition) -> Result<Self, HypergraphError> {
        let table_of = repo.columns.iter().map(|c| c.table_index).collect();
        Self::assemble(
            repo.len(),
            table_of,
            build_intra_edges(repo),
            build_inter_edges(partition),
        )
    }

    /// Every node in its own hyperedge (the no-hypergraph ablation).
    pub fn singletons(table_of: Vec<usize>) -> Self {
        let n = table_of.len();
        Self::assemble(n, table_of, (0..n).map(|i| vec![i]).collect(), Vec::new())
            .expect("singleton edges cover every node")
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_sizes(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.members.len()).collect()
    }

    pub fn node_degrees(&self) -> Vec<usize> {
        self.node_edges.iter().map(Vec::len).collect()
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Dense `n × m` incidence matrix.
    pub fn incidence(&self) -> Mat {
        let mut pi = Mat::zeros((self.n, self.m()));
        for e in &self.edges {
            for &v in &e.members {
                pi[[v, e.edge_id]] = 1.0;
            }
        }
        pi
    }

    /// Shared-node counts between distinct edges, row-normalized; rows of
    /// edges sharing nothing stay zero.
    pub fn hyperedge_adjacency(&self) -> Mat {
        let m = self.m();
        let mut a = Mat::zeros((m, m));
        for edges in &self.node_edges {
            for &i in edges {
                for &j in edges {
                    if i != j {
                        a[[i, j]] += 1.0;
                    }
                }
            }
        }
        for mut row in a.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        a
    }

    /// Connected-component label per edge in the edge-overlap graph
    /// (labels are dense, ordered by smallest edge id).
    pub fn edge_components(&self) -> Vec<usize> {
        let mut uf = crate::augment::UnionFind::new(self.m());
        for edges in &self.node_edges {
            for w in edges.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let mut label = vec![usize::MAX; self.m()];
        let mut root_label = std::collections::HashMap::new();
        for (e, l) in label.iter_mut().enumerate() {
            let r = uf.find(e);
            let next = root_label.len();
            *l = *root_label.entry(r).or_insert(next);
        }
        label
    }

    /// Relabels nodes so that new node `i` is old node `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n);
        let mut inverse = vec![0; self.n];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for e in &self.edges {
            let members = e.members.iter().map(|&v| inverse[v]).collect();
            match e.kind {
                EdgeKind::Inter => inter.push(members),
                EdgeKind::Intra => intra.push(members),
            }
        }
        let table_of = order.iter().map(|&o| self.table_of[o]).collect();
        let mut g = Self::assemble(self.n, table_of, intra, inter).expect("permutation preserves validity");
        g.num_tables = self.num_tables;
        g
    }

    /// Lines `edge_id,kind,member...`.
    pub fn write_edges(&self, path: &Path) -> Result<(), HypergraphError> {
        let io = |source| HypergraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for e in &self.edges {
            let members: Vec<String> = e.members.iter().map(usize::to_string).collect();
            writeln!(w, "{},{},{}", e.edge_id, e.kind.as_str(), members.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_edges(path: &Path, table_of: Vec<usize>) -> Result<Self, HypergraphError> {
        let io = |source| HypergraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let parse = |line: usize, reason: String| HypergraphError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(parse(i + 1, "expected edge_id,kind,members...".into()));
            }
            let expected = intra.len() + inter.len();
            if fields[0].parse::<usize>().ok() != Some(expected) {
                return Err(parse(i + 1, format!("expected edge id {expected}")));
            }
            let members = fields[2..]
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse(i + 1, e.to_string()))?;
            match fields[1] {
                "inter" if intra.is_empty() => inter.push(members),
                "inter" => return Err(parse(i + 1, "inter edge after intra edges".into())),
                "intra" => intra.push(members),
                other => return Err(parse(i + 1, format!("unknown edge kind {other}"))),
            }
        }
        Self::assemble(table_of.len(), table_of, intra, inter)
    }
}

/// Dense symmetric 0/1 adjacency over train-split pairs.
pub fn join_adjacency(n: usize, pairs: &[JoinPair]) -> Mat {
    let mut a = Mat::zeros((n, n));
    for p in pairs.iter().filter(|p| p.split == Split::Train) {
        a[[p.left, p.right]] = 1.0;
        a[[p.right, p.left]] = 1.0;
    }
    a
}

/// `I - D^{-1/2} A D^{-1/2}`; isolated nodes get a zero scaling entry.
pub fn normalized_laplacian(a: &Mat) -> Result<Mat, HypergraphError> {
    let (r, c) = a.dim();
    if r != c {
        return Err(HypergraphError::NotSquare(r, c));
    }
    for i in 0..r {
        for j in (i + 1)..r {
            if a[[i, j]] != a[[j, i]] {
                return Err(HypergraphError::NotSymmetric(i, j));
            }
        }
    }
    let scale: Vec<f64> = a
        .rows()
        .into_iter()
        .map(|row| {
            let d = row.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(Mat::from_shape_fn((r, r), |(i, j)| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - scale[i] * a[[i, j]] * scale[j]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPe {
    /// `n × k`, columns are unit eigenvectors (or zero padding).
    pub vectors: Mat,
    /// Ascending; only the `min(n, k)` real ones.
    pub eigenvalues: Vec<f64>,
}

/// The `k` eigenvectors of the smallest eigenvalues of the normalized
/// Laplacian of `a`, sign-fixed so each column's largest-magnitude entry is
/// positive. Eigenvalue ties are ordered by descending lexicographic
/// comparison of the sign-fixed vectors; missing columns are zero.
const PE_ZERO_TOL: f64 = 1e-9;

pub fn laplacian_pe(a: &Mat, k: usize) -> Result<LaplacianPe, HypergraphError> {
    let l = normalized_laplacian(a)?;
    let n = l.nrows();
    if n > DENSE_EIGEN_WARN {
        log::warn!("dense eigen-decomposition of a {n}x{n} Laplacian; this is cubic in the node count");
    }
    if n == 0 {
        return Ok(LaplacianPe {
            vectors: Mat::zeros((0, k)),
            eigenvalues: Vec::new(),
        });
    }
    let dm = DMatrix::from_fn(n, n, |i, j| l[[i, j]]);
    let eig = SymmetricEigen::try_new(dm, f64::EPSILON, 0).ok_or(HypergraphError::NoConvergence)?;

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            // Solver residue is not signal; exact zeros keep components apart.
            v.iter_mut().for_each(|x| {
                *x /= norm;
                if x.abs() < PE_ZERO_TOL {
                    *x = 0.0;
                }
            });
            // First entry of (near-)maximal magnitude, so roundoff can't flip it.
            let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let pivot = v.iter().position(|x| x.abs() >= max - 1e-12).unwrap_or(0);
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[c], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Order each run of tied eigenvalues by descending vector.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end].0 - pairs[end - 1].0 <= TIE_TOL {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| {
            b.1.iter()
                .zip(&a.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        start = end;
    }

    let take = k.min(n);
    let mut vectors = Mat::zeros((n, k));
    for (c, (_, v)) in pairs.iter().take(take).enumerate() {
        for (r, x) in v.iter().enumerate() {
            vectors[[r, c]] = *x;
        }
    }
    Ok(LaplacianPe {
        vectors,
        eigenvalues: pairs.iter().take(take).map(|p| p.0).collect(),
    })
}

/// Header `(n, k)` as little-endian u64, then f32 rows.
pub fn write_pe(path: &Path, pe: &Mat) -> Result<(), HypergraphError> {
    crate::io::write_f32_matrix(path, pe).map_err(|source| HypergraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_pe(path: &Path) -> Result<Mat, HypergraphError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| HypergraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    crate::io::decode_f32_matrix(&bytes).map_err(|reason| HypergraphError::Parse {
        path: path.to_path_buf(),
        line: 0,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intra_and_inter_edge_counts() {
        let p = EntityPartition::singletons(4);
        assert!(build_inter_edges(&p).is_empty());
        let p = EntityPartition {
            components: vec![vec![0], vec![1, 2, 3], vec![4, 5], vec![6]],
            component_of: vec![0, 1, 1, 1, 2, 2, 3],
        };
        assert_eq!(build_inter_edges(&p), vec![vec![1, 2, 3], vec![4, 5]]);
    }

    #[test]
    fn assemble_two_tables_with_one_entity() {
        let g = Hypergraph::assemble(5, vec![0, 0, 0, 1, 1], vec![vec![0, 1, 2], vec![3, 4]], vec![vec![0, 3]])
            .unwrap();
        assert_eq!(g.m(), 3);
        assert_eq!(g.incidence().sum(), 7.0);
        assert_eq!(g.edges[0].kind, EdgeKind::Inter);
        assert_eq!(g.node_degrees(), vec![2, 1, 1, 2, 1]);
        assert_eq!(g.edge_sizes(), vec![2, 3, 2]);
        let g = Hypergraph::assemble(5, vec![0, 0, 0, 1, 1], vec![vec![0, 1, 2], vec![3, 4]], vec![]).unwrap();
        assert_eq!(g.m(), 2);
    }

    #[test]
    fn uncovered_node_is_rejected() {
        let err = Hypergraph::assemble(3, vec![0, 0, 1], vec![vec![0, 1]], vec![]).unwrap_err();
        assert!(matches!(err, HypergraphError::IsolatedNode(2)));
    }

    #[test]
    fn hyperedge_adjacency_by_hand() {
        // e0={0,1,2}, e1={1,2,3}, e2={3,4}
        let g = Hypergraph::assemble(5, vec![0; 5], vec![vec![0, 1, 2], vec![1, 2, 3], vec![3, 4]], vec![]).unwrap();
        let a = g.hyperedge_adjacency();
        let expect = [[0.0, 1.0, 0.0], [2.0 / 3.0, 0.0, 1.0 / 3.0], [0.0, 1.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[[i, j]] - expect[i][j]).abs() < 1e-15);
            }
        }
        let g = Hypergraph::singletons(vec![0, 1]);
        assert_eq!(g.hyperedge_adjacency().sum(), 0.0);
        assert_eq!(g.edge_components(), vec![0, 1]);
    }

    #[test]
    fn two_node_pe_closed_form() {
        let a = Mat::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let pe = laplacian_pe(&a, 16).unwrap();
        assert!((pe.eigenvalues[0] - 0.0).abs() < 1e-12);
        assert!((pe.eigenvalues[1] - 2.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pe.vectors[[0, 0]] - s).abs() < 1e-12 && (pe.vectors[[1, 0]] - s).abs() < 1e-12);
        // largest-magnitude entries tie; the first one is made positive
        assert!((pe.vectors[[0, 1]] - s).abs() < 1e-12 && (pe.vectors[[1, 1]] + s).abs() < 1e-12);
        assert_eq!(pe.vectors.ncols(), 16);
        assert!(pe.vectors.column(5).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_laplacian_gives_standard_basis() {
        let pe = laplacian_pe(&Mat::zeros((5, 5)), 3).unwrap();
        assert_eq!(pe.eigenvalues, vec![1.0; 3]);
        let mut expect = Mat::zeros((5, 3));
        for i in 0..3 {
            expect[[i, i]] = 1.0;
        }
        assert_eq!(pe.vectors, expect);
    }

    #[test]
    fn asymmetric_adjacency_is_rejected() {
        let a = Mat::from_shape_vec((2, 2), vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(laplacian_pe(&a, 2), Err(HypergraphError::NotSymmetric(0, 1))));
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Hypergraph::assemble(5, vec![0, 0, 0, 1, 1], vec![vec![0, 1, 2], vec![3, 4]], vec![vec![0, 3]])
            .unwrap();
        let path = dir.path().join("edges.csv");
        g.write_edges(&path).unwrap();
        assert_eq!(Hypergraph::read_edges(&path, g.table_of.clone()).unwrap(), g);
        let pe = laplacian_pe(&join_adjacency(5, &[JoinPair::new(0, 3, Split::Train).unwrap()]), 4).unwrap();
        let pe_path = dir.path().join("pe.bin");
        write_pe(&pe_path, &pe.vectors).unwrap();
        let back = read_pe(&pe_path).unwrap();
        assert_eq!(back.dim(), (5, 4));
        assert!(back.iter().zip(pe.vectors.iter()).all(|(a, b)| (a - *b as f32 as f64).abs() == 0.0));
    }

    fn arb_graph() -> impl Strategy<Value = Mat> {
        (1usize..12).prop_flat_map(|n| {
            prop::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
                let mut a = Mat::zeros((n, n));
                for i in 0..n {
                    for j in (i + 1)..n {
                        if bits[i * n + j] {
                            a[[i, j]] = 1.0;
                            a[[j, i]] = 1.0;
                        }
                    }
                }
                a
            })
        })
    }

    proptest! {
        #[test]
        fn pe_is_orthonormal_in_range_and_deterministic(a in arb_graph()) {
            let pe = laplacian_pe(&a, DEFAULT_PE_DIM).unwrap();
            let n = a.nrows();
            for &lambda in &pe.eigenvalues {
                prop_assert!((-1e-9..=2.0 + 1e-9).contains(&lambda));
            }
            prop_assert!(pe.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-9));
            let l = normalized_laplacian(&a).unwrap();
            for c in 0..n.min(DEFAULT_PE_DIM) {
                let v = pe.vectors.column(c);
                prop_assert!((v.dot(&v) - 1.0).abs() < 1e-9);
                let lv = l.dot(&v);
                for r in 0..n {
                    prop_assert!((lv[r] - pe.eigenvalues[c] * v[r]).abs() < 1e-8);
                }
                let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let pivot = v.iter().position(|x| x.abs() >= max - 1e-12).unwrap();
                prop_assert!(v[pivot] > 0.0);
            }
            prop_assert_eq!(laplacian_pe(&a, DEFAULT_PE_DIM).unwrap(), pe);
        }

        #[test]
        fn incidence_marginals_match_member_lists(sizes in prop::collection::vec(1usize..4, 1..6), extra in prop::collection::vec((0usize..20, 0usize..20), 0..4)) {
            let mut table_of = Vec::new();
            let mut intra = Vec::new();
            for (t, &s) in sizes.iter().enumerate() {
                intra.push((table_of.len()..table_of.len() + s).collect::<Vec<_>>());
                table_of.extend(std::iter::repeat_n(t, s));
            }
            let n = table_of.len();
            let inter: Vec<Vec<usize>> = extra.iter().map(|&(a, b)| vec![a % n, b % n]).filter(|e| e[0] != e[1]).collect();
            let g = Hypergraph::assemble(n, table_of, intra, inter).unwrap();
            let pi = g.incidence();
            let col_sums: Vec<usize> = pi.sum_axis(ndarray::Axis(0)).iter().map(|&x| x as usize).collect();
            let row_sums: Vec<usize> = pi.sum_axis(ndarray::Axis(1)).iter().map(|&x| x as usize).collect();
            prop_assert_eq!(col_sums, g.edge_sizes());
            prop_assert_eq!(row_sums, g.node_degrees());
            prop_assert_eq!(g.count(EdgeKind::Intra), sizes.len());
        }
    }
}
