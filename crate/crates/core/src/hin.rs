//! Hierarchical interaction network.
//!
//! Columns get positional terms (table embedding, projected Laplacian row),
//! pass through node layers, are pooled into hyperedge tokens with
//! kind-specific transforms, mixed by structure-biased attention and
//! channel MLPs, and finally read back into unit-norm column embeddings.
//!
//! Attention is restricted to tokens in the same connected component of the
//! hyperedge-overlap graph, so columns in disconnected parts of the lake
//! never exchange information.

use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::hypergraph::{EdgeKind, Hypergraph};
use crate::params::{join, Dropout, Init, Linear, Norm, ParamTree};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HinConfig {
    pub dim: usize,
    pub node_layers: usize,
    pub mixer_layers: usize,
    pub heads: usize,
    pub pe_dim: usize,
}

impl Default for HinConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            node_layers: 2,
            mixer_layers: 2,
            heads: 4,
            pe_dim: crate::hypergraph::DEFAULT_PE_DIM,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HinError {
    #[error("node {node} has table index {table} but only {tables} table embeddings exist")]
    UnknownTable { node: usize, table: usize, tables: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayer<T> {
    pub lin: Linear<T>,
    pub norm: Norm<T>,
}

impl<T> ParamTree<T> for NodeLayer<T> {
    type Mapped<U> = NodeLayer<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> NodeLayer<U> {
        NodeLayer {
            lin: self.lin.map_params(&join(prefix, "lin"), f),
            norm: self.norm.map_params(&join(prefix, "norm"), f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.lin.visit_params_mut(&join(prefix, "lin"), f);
        self.norm.visit_params_mut(&join(prefix, "norm"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerLayer<T> {
    pub attn_norm: Norm<T>,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub mlp_norm: Norm<T>,
    /// `d × 2d`.
    pub w_1: T,
    /// `2d × d`.
    pub w_2: T,
}

impl<T> ParamTree<T> for MixerLayer<T> {
    type Mapped<U> = MixerLayer<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> MixerLayer<U> {
        MixerLayer {
            attn_norm: self.attn_norm.map_params(&join(prefix, "attn_norm"), f),
            w_q: f(&join(prefix, "w_q"), &self.w_q),
            w_k: f(&join(prefix, "w_k"), &self.w_k),
            w_v: f(&join(prefix, "w_v"), &self.w_v),
            w_o: f(&join(prefix, "w_o"), &self.w_o),
            mlp_norm: self.mlp_norm.map_params(&join(prefix, "mlp_norm"), f),
            w_1: f(&join(prefix, "w_1"), &self.w_1),
            w_2: f(&join(prefix, "w_2"), &self.w_2),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.attn_norm.visit_params_mut(&join(prefix, "attn_norm"), f);
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        f(&join(prefix, "w_o"), &mut self.w_o);
        self.mlp_norm.visit_params_mut(&join(prefix, "mlp_norm"), f);
        f(&join(prefix, "w_1"), &mut self.w_1);
        f(&join(prefix, "w_2"), &mut self.w_2);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HinParams<T = Mat> {
    /// `tables × d`.
    pub table_emb: T,
    pub alpha: T,
    pub beta: T,
    pub pe_in: Linear<T>,
    pub pe_out: Linear<T>,
    pub node_layers: Vec<NodeLayer<T>>,
    pub w_inter: T,
    pub w_intra: T,
    pub mixers: Vec<MixerLayer<T>>,
    /// Scale of the hyperedge-adjacency bias on attention logits.
    pub lambda_attn: T,
    pub w_h2c: T,
    pub out_norm: Norm<T>,
    /// Attention heads; not trainable.
    pub heads: usize,
}

impl<T> ParamTree<T> for HinParams<T> {
    type Mapped<U> = HinParams<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> HinParams<U> {
        HinParams {
            table_emb: f(&join(prefix, "table_emb"), &self.table_emb),
            alpha: f(&join(prefix, "alpha"), &self.alpha),
            beta: f(&join(prefix, "beta"), &self.beta),
            pe_in: self.pe_in.map_params(&join(prefix, "pe_in"), f),
            pe_out: self.pe_out.map_params(&join(prefix, "pe_out"), f),
            node_layers: self
                .node_layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map_params(&join(prefix, &format!("node{i}")), f))
                .collect(),
            w_inter: f(&join(prefix, "w_inter"), &self.w_inter),
            w_intra: f(&join(prefix, "w_intra"), &self.w_intra),
            mixers: self
                .mixers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map_params(&join(prefix, &format!("mixer{i}")), f))
                .collect(),
            lambda_attn: f(&join(prefix, "lambda_attn"), &self.lambda_attn),
            w_h2c: f(&join(prefix, "w_h2c"), &self.w_h2c),
            out_norm: self.out_norm.map_params(&join(prefix, "out_norm"), f),
            heads: self.heads,
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "table_emb"), &mut self.table_emb);
        f(&join(prefix, "alpha"), &mut self.alpha);
        f(&join(prefix, "beta"), &mut self.beta);
        self.pe_in.visit_params_mut(&join(prefix, "pe_in"), f);
        self.pe_out.visit_params_mut(&join(prefix, "pe_out"), f);
        for (i, l) in self.node_layers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &format!("node{i}")), f);
        }
        f(&join(prefix, "w_inter"), &mut self.w_inter);
        f(&join(prefix, "w_intra"), &mut self.w_intra);
        for (i, l) in self.mixers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &format!("mixer{i}")), f);
        }
        f(&join(prefix, "lambda_attn"), &mut self.lambda_attn);
        f(&join(prefix, "w_h2c"), &mut self.w_h2c);
        self.out_norm.visit_params_mut(&join(prefix, "out_norm"), f);
    }
}

fn scalar(x: f64) -> Mat {
    Mat::from_elem((1, 1), x)
}

impl HinParams<Mat> {
    pub fn init(init: &mut Init<'_>, cfg: &HinConfig, num_tables: usize) -> Self {
        let d = cfg.dim;
        assert!(cfg.heads > 0 && d % cfg.heads == 0, "dim must be divisible by heads");
        Self {
            table_emb: init.glorot(num_tables.max(1), d),
            alpha: scalar(1.0),
            beta: scalar(1.0),
            pe_in: init.linear(cfg.pe_dim, d),
            pe_out: init.linear(d, d),
            node_layers: (0..cfg.node_layers)
                .map(|_| NodeLayer {
                    lin: init.linear(d, d),
                    norm: init.norm(d),
                })
                .collect(),
            w_inter: init.glorot(d, d),
            w_intra: init.glorot(d, d),
            mixers: (0..cfg.mixer_layers)
                .map(|_| MixerLayer {
                    attn_norm: init.norm(d),
                    w_q: init.glorot(d, d),
                    w_k: init.glorot(d, d),
                    w_v: init.glorot(d, d),
                    w_o: init.glorot(d, d),
                    mlp_norm: init.norm(d),
                    w_1: init.glorot(d, 2 * d),
                    w_2: init.glorot(2 * d, d),
                })
                .collect(),
            lambda_attn: scalar(1.0),
            w_h2c: init.glorot(d, d),
            out_norm: init.norm(d),
            heads: cfg.heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_h2c.ncols()
    }

    pub fn num_tables(&self) -> usize {
        self.table_emb.nrows()
    }
}

/// Hypergraph-derived constants of a forward pass.
#[derive(Debug, Clone)]
pub struct HinStructure {
    pub n: usize,
    pub m: usize,
    pub table_of: Rc<Vec<usize>>,
    pub edge_members: Rc<Vec<Vec<usize>>>,
    pub node_edges: Rc<Vec<Vec<usize>>>,
    pub inter: Rc<Vec<usize>>,
    pub intra: Rc<Vec<usize>>,
    /// Row-normalized shared-node matrix between hyperedges.
    pub adjacency: Rc<Mat>,
    /// True where two hyperedges lie in the same overlap component.
    pub attend: Rc<Array2<bool>>,
    /// `n × k` Laplacian positional basis.
    pub pe: Mat,
}

impl HinStructure {
    pub fn new(hg: &Hypergraph, pe: Mat) -> Self {
        assert_eq!(pe.nrows(), hg.n, "one positional row per node");
        let inter: Vec<usize> = hg.edges.iter().filter(|e| e.kind == EdgeKind::Inter).map(|e| e.edge_id).collect();
        let intra: Vec<usize> = hg.edges.iter().filter(|e| e.kind == EdgeKind::Intra).map(|e| e.edge_id).collect();
        assert!(
            inter.iter().enumerate().all(|(i, &e)| i == e),
            "inter edges must precede intra edges"
        );
        let comp = hg.edge_components();
        let m = hg.m();
        Self {
            n: hg.n,
            m,
            table_of: Rc::new(hg.table_of.clone()),
            edge_members: Rc::new(hg.edges.iter().map(|e| e.members.clone()).collect()),
            node_edges: Rc::new(hg.node_edges.clone()),
            inter: Rc::new(inter),
            intra: Rc::new(intra),
            adjacency: Rc::new(hg.hyperedge_adjacency()),
            attend: Rc::new(Array2::from_shape_fn((m, m), |(i, j)| comp[i] == comp[j])),
            pe,
        }
    }
}

/// `H0 = X + α E_tbl[t] + β MLP_pe(V_pe)`.
pub fn positional_encoding(
    tape: &mut Tape,
    p: &HinParams<Var>,
    s: &HinStructure,
    x: Var,
) -> Result<Var, HinError> {
    let tables = tape.value(p.table_emb).nrows();
    if let Some((node, &table)) = s.table_of.iter().enumerate().find(|(_, &t)| t >= tables) {
        return Err(HinError::UnknownTable { node, table, tables });
    }
    let (xr, xc) = tape.value(x).dim();
    if xr != s.n || s.pe.ncols() != tape.value(p.pe_in.w).nrows() || xc != tape.value(p.w_h2c).nrows() {
        return Err(HinError::Shape(format!(
            "features {xr}x{xc}, positional basis {:?}, n = {}",
            s.pe.dim(),
            s.n
        )));
    }
    let tbl = tape.gather_rows(p.table_emb, s.table_of.clone());
    let tbl = tape.scale(tbl, p.alpha);
    let pe = tape.constant(s.pe.clone());
    let pe = p.pe_in.apply(tape, pe);
    let pe = tape.relu(pe);
    let pe = p.pe_out.apply(tape, pe);
    let pe = tape.scale(pe, p.beta);
    let h = tape.add(x, tbl);
    Ok(tape.add(h, pe))
}

/// `H ← LN(ReLU(H W + b))` per node layer.
pub fn node_layers(tape: &mut Tape, p: &HinParams<Var>, mut h: Var) -> Var {
    for layer in &p.node_layers {
        let y = layer.lin.apply(tape, h);
        let y = tape.relu(y);
        h = layer.norm.apply(tape, y);
    }
    h
}

/// Mean-pooled member states per hyperedge, passed through the kind's
/// transform, in edge order (`m × d`).
pub fn local_aggregation(tape: &mut Tape, p: &HinParams<Var>, s: &HinStructure, h: Var) -> Var {
    let xe = tape.segment_mean(h, s.edge_members.clone());
    let mut parts = Vec::new();
    for (ids, w) in [(&s.inter, p.w_inter), (&s.intra, p.w_intra)] {
        if !ids.is_empty() {
            let rows = tape.gather_rows(xe, ids.clone());
            parts.push(tape.matmul(rows, w));
        }
    }
    tape.concat_rows(&parts)
}

/// Structure-biased multi-head attention and channel mixing over tokens.
pub fn global_mixing(
    tape: &mut Tape,
    p: &HinParams<Var>,
    s: &HinStructure,
    mut z: Var,
    dropout: &mut Dropout,
) -> Var {
    let d = tape.value(p.w_h2c).nrows();
    let heads = p.heads;
    assert!(heads > 0 && d % heads == 0, "dim {d} not divisible by {heads} heads");
    let dk = d / heads;
    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    for layer in &p.mixers {
        let zn = layer.attn_norm.apply(tape, z);
        let q = tape.matmul(zn, layer.w_q);
        let k = tape.matmul(zn, layer.w_k);
        let v = tape.matmul(zn, layer.w_v);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q, a, b);
            let kh = tape.slice_cols(k, a, b);
            let vh = tape.slice_cols(v, a, b);
            let kt = tape.transpose(kh);
            let logits = tape.matmul(qh, kt);
            let logits = tape.scale_const(logits, inv_sqrt);
            let logits = tape.add_scaled_const(logits, p.lambda_attn, s.adjacency.clone());
            let probs = tape.softmax_rows_masked(logits, s.attend.clone());
            outs.push(tape.matmul(probs, vh));
        }
        let cat = tape.concat_cols(&outs);
        let o = tape.matmul(cat, layer.w_o);
        let o = dropout.apply(tape, o);
        z = tape.add(z, o);

        let zn = layer.mlp_norm.apply(tape, z);
        let u = tape.matmul(zn, layer.w_1);
        let u = tape.gelu(u);
        let u = tape.matmul(u, layer.w_2);
        z = tape.add(z, u);
    }
    z
}

/// `L2Norm(LN(H + mean_{e ∋ v} z_e W_h2c))`.
pub fn propagate_to_columns(tape: &mut Tape, p: &HinParams<Var>, s: &HinStructure, h: Var, z: Var) -> Var {
    let msg = tape.matmul(z, p.w_h2c);
    let msg = tape.segment_mean(msg, s.node_edges.clone());
    let y = tape.add(h, msg);
    let y = p.out_norm.apply(tape, y);
    tape.l2_normalize_rows(y)
}

/// Full forward from initial column features to unit-norm embeddings.
pub fn forward(
    tape: &mut Tape,
    p: &HinParams<Var>,
    s: &HinStructure,
    x: Var,
    dropout: &mut Dropout,
) -> Result<Var, HinError> {
    let h0 = positional_encoding(tape, p, s, x)?;
    let h = node_layers(tape, p, h0);
    let tokens = local_aggregation(tape, p, s, h);
    let z = global_mixing(tape, p, s, tokens, dropout);
    Ok(propagate_to_columns(tape, p, s, h, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{join_adjacency, laplacian_pe};
    use crate::lake::{JoinPair, Split};
    use crate::params::bind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = 8;

    fn cfg() -> HinConfig {
        HinConfig {
            dim: D,
            pe_dim: 4,
            ..HinConfig::default()
        }
    }

    fn params(seed: u64, tables: usize) -> HinParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HinParams::init(&mut Init { rng: &mut rng }, &cfg(), tables)
    }

    fn random(rows: usize, cols: usize, seed: u64, bound: f64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
    }

    fn toy() -> Hypergraph {
        // tables {0,1,2} and {3,4}; entity {0,3}
        Hypergraph::assemble(5, vec![0, 0, 0, 1, 1], vec![vec![0, 1, 2], vec![3, 4]], vec![vec![0, 3]]).unwrap()
    }

    fn pe_for(hg: &Hypergraph, pairs: &[(usize, usize)], k: usize) -> Mat {
        let pairs: Vec<JoinPair> = pairs.iter().map(|&(a, b)| JoinPair::new(a, b, Split::Train).unwrap()).collect();
        laplacian_pe(&join_adjacency(hg.n, &pairs), k).unwrap().vectors
    }

    fn run(p: &HinParams, s: &HinStructure, x: &Mat) -> Mat {
        let mut tape = Tape::new();
        let pv = bind(p, &mut tape);
        let xv = tape.constant(x.clone());
        let out = forward(&mut tape, &pv, s, xv, &mut Dropout::eval()).unwrap();
        tape.value(out).clone()
    }

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn positional_encoding_terms() {
        let hg = toy();
        let s = HinStructure::new(&hg, pe_for(&hg, &[(0, 3)], 4));
        let x = random(5, D, 1, 1.0);
        let mut p = params(2, 2);
        p.alpha = scalar(0.0);
        p.beta = scalar(0.0);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let xv = tape.constant(x.clone());
        let h0 = positional_encoding(&mut tape, &pv, &s, xv).unwrap();
        assert_eq!(tape.value(h0), &x);

        p.alpha = scalar(1.0);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let xv = tape.constant(Mat::zeros((5, D)));
        let h0 = positional_encoding(&mut tape, &pv, &s, xv).unwrap();
        for v in 0..5 {
            assert_eq!(tape.value(h0).row(v), p.table_emb.row(hg.table_of[v]));
        }

        let p = params(2, 1);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let xv = tape.constant(x);
        assert!(matches!(
            positional_encoding(&mut tape, &pv, &s, xv),
            Err(HinError::UnknownTable { node: 3, table: 1, tables: 1 })
        ));
    }

    #[test]
    fn same_table_same_inputs_same_h0() {
        let hg = Hypergraph::assemble(2, vec![0, 0], vec![vec![0, 1]], vec![]).unwrap();
        let s = HinStructure::new(&hg, Mat::zeros((2, 4)));
        let mut x = random(2, D, 3, 1.0);
        let r0 = x.row(0).to_owned();
        x.row_mut(1).assign(&r0);
        let p = params(4, 1);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let xv = tape.constant(x);
        let h0 = positional_encoding(&mut tape, &pv, &s, xv).unwrap();
        assert_eq!(tape.value(h0).row(0), tape.value(h0).row(1));
    }

    #[test]
    fn local_aggregation_means_and_transforms() {
        let hg = toy();
        let s = HinStructure::new(&hg, Mat::zeros((5, 4)));
        let h = random(5, D, 5, 2.0);
        let mut p = params(6, 2);
        p.w_inter = Mat::eye(D);
        p.w_intra = Mat::eye(D);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let hv = tape.constant(h.clone());
        let t = local_aggregation(&mut tape, &pv, &s, hv);
        let t = tape.value(t).clone();
        assert_eq!(t.nrows(), 3);
        let e0 = (&h.row(0) + &h.row(3)) / 2.0;
        assert!(close(&t.row(0).to_owned().insert_axis(ndarray::Axis(0)), &e0.insert_axis(ndarray::Axis(0)), 1e-15));
        let e1 = (&h.row(0) + &h.row(1) + &h.row(2)) / 3.0;
        assert!(t.row(1).iter().zip(e1.iter()).all(|(a, b)| (a - b).abs() < 1e-15));

        // singleton: the member row times its kind transform
        let hg = Hypergraph::singletons(vec![0, 0]);
        let s = HinStructure::new(&hg, Mat::zeros((2, 4)));
        let p = params(7, 1);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let hv = tape.constant(h.slice(ndarray::s![0..2, ..]).to_owned());
        let t = local_aggregation(&mut tape, &pv, &s, hv);
        let expect = h.slice(ndarray::s![0..2, ..]).dot(&p.w_intra);
        assert!(close(tape.value(t), &expect, 1e-12));
    }

    #[test]
    fn single_token_attention_returns_value_projection() {
        let hg = Hypergraph::assemble(2, vec![0, 0], vec![vec![0, 1]], vec![]).unwrap();
        let s = HinStructure::new(&hg, Mat::zeros((2, 4)));
        assert_eq!(s.adjacency.dim(), (1, 1));
        assert_eq!(s.adjacency[[0, 0]], 0.0);
        let mut p = params(8, 1);
        p.mixers.truncate(1);
        // zero the channel MLP so only attention remains
        p.mixers[0].w_2.fill(0.0);
        let z = random(1, D, 9, 1.0);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let zv = tape.constant(z.clone());
        let out = global_mixing(&mut tape, &pv, &s, zv, &mut Dropout::eval());
        let l = &p.mixers[0];
        let mut t2 = Tape::new();
        let lv = bind(&l.attn_norm, &mut t2);
        let zc = t2.constant(z.clone());
        let zn = lv.apply(&mut t2, zc);
        let expect = &z + &t2.value(zn).dot(&l.w_v).dot(&l.w_o);
        assert!(close(tape.value(out), &expect, 1e-12));
    }

    #[test]
    fn propagation_averages_incident_messages() {
        let hg = toy();
        let s = HinStructure::new(&hg, Mat::zeros((5, 4)));
        let mut p = params(10, 2);
        p.out_norm.gain.fill(1.0);
        let h = Mat::zeros((5, D));
        let z = random(3, D, 11, 1.0);
        let mut tape = Tape::new();
        let pv = bind(&p, &mut tape);
        let hv = tape.constant(h);
        let zv = tape.constant(z.clone());
        let zw = tape.matmul(zv, pv.w_h2c);
        let msg = tape.segment_mean(zw, s.node_edges.clone());
        let msg = tape.value(msg).clone();
        let zw = z.dot(&p.w_h2c);
        // node 1 sits only in edge 1; node 0 sits in edges 0 and 1
        assert!(close(&msg.row(1).to_owned().insert_axis(ndarray::Axis(0)), &zw.row(1).to_owned().insert_axis(ndarray::Axis(0)), 1e-15));
        let two = (&zw.row(0) + &zw.row(1)) / 2.0;
        assert!(msg.row(0).iter().zip(two.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        let out = propagate_to_columns(&mut tape, &pv, &s, hv, zv);
        for row in tape.value(out).rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_inputs_stay_finite_and_unit_norm() {
        for seed in 0..5 {
            let hg = toy();
            let s = HinStructure::new(&hg, pe_for(&hg, &[(0, 3), (1, 4)], 4));
            let x = random(5, D, 100 + seed, 10.0);
            let out = run(&params(seed, 2), &s, &x);
            assert!(out.iter().all(|v| v.is_finite()));
            for row in out.rows() {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let hg = Hypergraph::assemble(
            6,
            vec![0, 0, 0, 1, 1, 2],
            vec![vec![0, 1, 2], vec![3, 4], vec![5]],
            vec![vec![0, 3, 5], vec![1, 4]],
        )
        .unwrap();
        let pairs = [(0, 3), (3, 5), (1, 4)];
        let pe = pe_for(&hg, &pairs, 4);
        let s = HinStructure::new(&hg, pe.clone());
        let x = random(6, D, 12, 1.0);
        let p = params(13, 3);
        let out = run(&p, &s, &x);

        let order = [4, 2, 5, 0, 3, 1];
        let hp = hg.permuted(&order);
        let sp = HinStructure::new(&hp, pe.select(ndarray::Axis(0), &order));
        let outp = run(&p, &sp, &x.select(ndarray::Axis(0), &order));
        assert!(close(&outp, &out.select(ndarray::Axis(0), &order), 1e-6));
    }

    #[test]
    fn singleton_graph_without_positional_terms_is_local() {
        let hg = Hypergraph::singletons(vec![0, 0, 1, 1, 2]);
        let s = HinStructure::new(&hg, pe_for(&hg, &[(0, 2), (2, 4)], 4));
        let mut p = params(14, 3);
        p.alpha = scalar(0.0);
        p.beta = scalar(0.0);
        let x = random(5, D, 15, 1.0);
        let base = run(&p, &s, &x);
        for trial in 0..3 {
            let mut y = random(5, D, 200 + trial, 5.0);
            y.row_mut(2).assign(&x.row(2));
            let out = run(&p, &s, &y);
            for c in 0..D {
                assert!((out[[2, c]] - base[[2, c]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn positional_encoding_separates_mirrored_nodes() {
        // two identical 2-column join components, one column per table
        let hg = Hypergraph::assemble(
            4,
            vec![0, 1, 2, 3],
            vec![vec![0], vec![1], vec![2], vec![3]],
            vec![vec![0, 1], vec![2, 3]],
        )
        .unwrap();
        let pe = pe_for(&hg, &[(0, 1), (2, 3)], 4);
        let s = HinStructure::new(&hg, pe.clone());
        let row = random(1, D, 16, 1.0);
        let x = Mat::from_shape_fn((4, D), |(_, c)| row[[0, c]]);
        let mut p = params(17, 4);
        p.alpha = scalar(0.0);
        p.beta = scalar(0.0);
        let out = run(&p, &s, &x);
        assert!(close(&out.slice(ndarray::s![0..1, ..]).to_owned(), &out.slice(ndarray::s![2..3, ..]).to_owned(), 1e-12));

        assert_ne!(pe.row(0), pe.row(2));
        p.beta = scalar(1.0);
        let out = run(&p, &s, &x);
        let gap = (&out.row(0) - &out.row(2)).mapv(|v| v * v).sum().sqrt();
        assert!(gap > 1e-6, "gap {gap}");
    }

    #[test]
    fn parameter_names_are_unique_and_ordered() {
        let p = params(1, 2);
        let names: Vec<String> = crate::params::named_leaves(&p).into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "table_emb");
        assert!(names.contains(&"mixer1.w_2".to_string()));
    }
}
