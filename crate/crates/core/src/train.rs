//! Triplet training with hard negative mining and Adam.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::UnionFind;
use crate::autodiff::{Gradients, Mat, Tape, Var};
use crate::featurize::FeatureInputs;
use crate::hin::{HinError, HinStructure};
use crate::lake::{JoinPair, Split};
use crate::model::{embed, Encoder, ModelParams};
use crate::params::{bind, named_leaves, Dropout, ParamTree};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            batch_size: 64,
            epochs: 30,
            margin: 1.0,
            dropout: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error(transparent)]
    Hin(#[from] HinError),
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `max(0, D(a,p) - D(a,n) + margin)` with squared Euclidean `D`.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    (sq_dist(a, p) - sq_dist(a, n) + margin).max(0.0)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Columns connected through train join pairs count as joinable.
#[derive(Debug, Clone)]
pub struct JoinIndex {
    component: Vec<usize>,
}

impl JoinIndex {
    pub fn from_pairs(n: usize, pairs: &[JoinPair]) -> Self {
        let mut uf = UnionFind::new(n);
        for p in pairs.iter().filter(|p| p.split == Split::Train) {
            uf.union(p.left, p.right);
        }
        Self {
            component: (0..n).map(|v| uf.find(v)).collect(),
        }
    }

    pub fn joinable(&self, a: usize, b: usize) -> bool {
        self.component[a] == self.component[b]
    }
}

/// For each `(anchor, positive)`, the closest column not joinable with the
/// anchor; ties go to the lowest id. Anchors with no candidate are skipped.
pub fn mine_hard_negatives(batch: &[(usize, usize)], embeddings: &Mat, index: &JoinIndex) -> Vec<Triplet> {
    let n = embeddings.nrows();
    let mut out = Vec::with_capacity(batch.len());
    for &(anchor, positive) in batch {
        let a = embeddings.row(anchor);
        let mut best: Option<(f64, usize)> = None;
        for c in 0..n {
            if c == anchor || index.joinable(anchor, c) {
                continue;
            }
            let d = a.iter().zip(embeddings.row(c).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        match best {
            Some((_, negative)) => out.push(Triplet {
                anchor,
                positive,
                negative,
            }),
            None => log::warn!("column {anchor} is joinable with every other column; no negative"),
        }
    }
    out
}

/// Mean hinge loss over the triplets, on the tape.
pub fn batch_loss(tape: &mut Tape, emb: Var, triplets: &[Triplet], margin: f64) -> Var {
    let idx = |f: fn(&Triplet) -> usize| Rc::new(triplets.iter().map(f).collect::<Vec<_>>());
    let a = tape.gather_rows(emb, idx(|t| t.anchor));
    let p = tape.gather_rows(emb, idx(|t| t.positive));
    let n = tape.gather_rows(emb, idx(|t| t.negative));
    let dap = tape.sub(a, p);
    let dap = tape.mul(dap, dap);
    let dap = tape.row_sum(dap);
    let dan = tape.sub(a, n);
    let dan = tape.mul(dan, dan);
    let dan = tape.row_sum(dan);
    let diff = tape.sub(dap, dan);
    let hinge = tape.add_const(diff, margin);
    let hinge = tape.relu(hinge);
    tape.mean(hinge)
}

/// Adam with bias correction; moments start at zero.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// `grads` in the tree's visiting order.
    pub fn step<P: ParamTree<Mat>>(&mut self, params: &mut P, grads: &[Mat]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Mat::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_params_mut("", &mut |_, w| {
            let (g, m, v) = (&grads[i], &mut ms[i], &mut vs[i]);
            ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
            i += 1;
        });
        assert_eq!(i, grads.len(), "gradient list does not match parameters");
    }
}

/// Gradients for every leaf of `pv`, in visiting order.
pub fn collect_grads(grads: &Gradients, pv: &ModelParams<Var>, params: &ModelParams) -> Vec<Mat> {
    named_leaves(pv)
        .iter()
        .zip(named_leaves(params).iter())
        .map(|((_, v), (_, m))| grads.get_or_zeros(*v, m))
        .collect()
}

/// Everything a training step needs besides the parameters.
pub struct TrainData<'a> {
    pub inputs: &'a FeatureInputs,
    pub structure: &'a HinStructure,
    /// Train pairs as `(anchor, positive)`.
    pub pairs: Vec<(usize, usize)>,
    pub index: JoinIndex,
    pub encoder: Encoder,
}

impl<'a> TrainData<'a> {
    pub fn new(inputs: &'a FeatureInputs, structure: &'a HinStructure, pairs: &[JoinPair], encoder: Encoder) -> Self {
        let train: Vec<(usize, usize)> = pairs
            .iter()
            .filter(|p| p.split == Split::Train)
            .map(|p| (p.left, p.right))
            .collect();
        Self {
            inputs,
            structure,
            pairs: train,
            index: JoinIndex::from_pairs(inputs.len(), pairs),
            encoder,
        }
    }
}

/// Runs the training loop and returns the mean loss of every epoch.
/// Epochs in which no triplet could be mined record a loss of zero.
pub fn train_epochs(
    params: &mut ModelParams,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = data.pairs.clone();
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            global_step += 1;
            let dropout_rng = ChaCha8Rng::from_rng(&mut rng);
            let mut tape = Tape::new();
            let pv = bind(params, &mut tape);
            let mut dropout = Dropout::train(cfg.dropout, dropout_rng);
            let emb = embed(&mut tape, &pv, data.inputs, data.structure, data.encoder, &mut dropout)?;
            let triplets = mine_hard_negatives(batch, tape.value(emb), &data.index);
            if triplets.is_empty() {
                continue;
            }
            let loss = batch_loss(&mut tape, emb, &triplets, cfg.margin);
            let value = tape.value(loss)[[0, 0]];
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    step: global_step,
                });
            }
            let grads = tape.backward(loss);
            let flat = collect_grads(&grads, &pv, params);
            adam.step(params, &flat);
            total += value;
            steps += 1;
        }
        let mean = if steps > 0 { total / steps as f64 } else { 0.0 };
        log::info!("epoch {}: mean loss {mean:.6}", epoch + 1);
        history.push(mean);
    }
    Ok(history)
}

pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "epoch,mean_loss").map_err(io)?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loss of fixed triplets in eval mode.
pub fn fixed_triplet_loss(
    params: &ModelParams,
    data: &TrainData<'_>,
    triplets: &[Triplet],
    margin: f64,
) -> Result<f64, HinError> {
    let mut tape = Tape::new();
    let pv = bind(params, &mut tape);
    let emb = embed(&mut tape, &pv, data.inputs, data.structure, data.encoder, &mut Dropout::eval())?;
    let loss = batch_loss(&mut tape, emb, triplets, margin);
    Ok(tape.value(loss)[[0, 0]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares reverse-mode gradients of the fixed-triplet loss with central
/// differences for every scalar parameter.
pub fn finite_diff_check(
    params: &ModelParams,
    data: &TrainData<'_>,
    triplets: &[Triplet],
    margin: f64,
    eps: f64,
) -> Result<FdReport, HinError> {
    let mut tape = Tape::new();
    let pv = bind(params, &mut tape);
    let emb = embed(&mut tape, &pv, data.inputs, data.structure, data.encoder, &mut Dropout::eval())?;
    let loss = batch_loss(&mut tape, emb, triplets, margin);
    let analytic = collect_grads(&tape.backward(loss), &pv, params);

    let names: Vec<String> = named_leaves(params).into_iter().map(|(n, _)| n).collect();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let mut work = params.clone();
    for (leaf, name) in names.iter().enumerate() {
        let len = analytic[leaf].len();
        for j in 0..len {
            let orig = nth_leaf_entry(&mut work, leaf, j, None);
            nth_leaf_entry(&mut work, leaf, j, Some(orig + eps));
            let up = fixed_triplet_loss(&work, data, triplets, margin)?;
            nth_leaf_entry(&mut work, leaf, j, Some(orig - eps));
            let down = fixed_triplet_loss(&work, data, triplets, margin)?;
            nth_leaf_entry(&mut work, leaf, j, Some(orig));
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[leaf].as_slice().expect("standard layout")[j];
            let rel = (ad - fd).abs() / fd.abs().max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

/// Reads (and optionally overwrites) entry `j` of leaf number `leaf`.
fn nth_leaf_entry(p: &mut ModelParams, leaf: usize, j: usize, set: Option<f64>) -> f64 {
    let mut i = 0;
    let mut old = 0.0;
    p.visit_params_mut("", &mut |_, m| {
        if i == leaf {
            let s = m.as_slice_mut().expect("standard layout");
            old = s[j];
            if let Some(v) = set {
                s[j] = v;
            }
        }
        i += 1;
    });
    old
}
