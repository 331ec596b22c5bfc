//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! The op set is closed and small: exactly what the featurizer, the HIN
//! forward pass and the triplet objective need. Every node stores its
//! forward value; [`Tape::backward`] walks the tape in reverse and
//! accumulates exact vector-Jacobian products.
//!
//! ```
//! use lakejoin_core::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(&array![[3.0]]);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y);
//! assert_eq!(tape.value(y)[[0, 0]], 9.0);
//! assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
//! ```

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    MulConst(Var, Mat),
    AddScaledConst(Var, Var, Rc<Mat>),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Rc<Vec<usize>>),
    SegmentMean(Var, Rc<Vec<Vec<usize>>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    L2Normalize(Var, Vec<f64>),
    RowSum(Var),
    Mean(Var),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later reverse accumulation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Mat) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(like.raw_dim()))
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf. Gradients are reported for it.
    pub fn param(&mut self, value: &Mat) -> Var {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a + row` with `row` (1×c) broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a * s` for a 1×1 node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        let k = self.value(s)[[0, 0]];
        let value = self.value(a) * k;
        let ng = self.ng(a) || self.ng(s);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let ng = self.ng(a);
        self.push(value, Op::ScaleConst(a, k), ng)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let ng = self.ng(a);
        self.push(value, Op::AddConst(a), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Mat) -> Var {
        let value = self.value(a) * &mask;
        let ng = self.ng(a);
        self.push(value, Op::MulConst(a, mask), ng)
    }

    /// `a + s * c` for a 1×1 node `s` and constant matrix `c`.
    pub fn add_scaled_const(&mut self, a: Var, s: Var, c: Rc<Mat>) -> Var {
        let k = self.value(s)[[0, 0]];
        let value = self.value(a) + &(c.as_ref() * k);
        let ng = self.ng(a) || self.ng(s);
        self.push(value, Op::AddScaledConst(a, s, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let ng = self.ng(a);
        self.push(value, Op::Gelu(a), ng)
    }

    /// Row-wise softmax. Entries that are `-inf` get probability zero; every
    /// row must keep at least one finite entry.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_impl(a, None)
    }

    /// Row-wise softmax restricted to entries where `mask` is true.
    pub fn softmax_rows_masked(&mut self, a: Var, mask: Rc<Array2<bool>>) -> Var {
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<Rc<Array2<bool>>>) -> Var {
        let mut value = self.value(a).clone();
        if let Some(mask) = &mask {
            Zip::from(&mut value).and(mask.as_ref()).for_each(|v, &keep| {
                if !keep {
                    *v = f64::NEG_INFINITY;
                }
            });
        }
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            debug_assert!(max.is_finite(), "softmax row fully masked");
            row.mapv_inplace(|x| (x - max).exp());
            let total: f64 = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        let ng = self.ng(a);
        self.push(value, Op::Softmax(a), ng)
    }

    /// Row-wise layer normalization with learnable gain and bias (both 1×c).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let cols = input.ncols() as f64;
        let mut xhat = input.clone();
        let mut inv_std = Vec::with_capacity(input.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let value = &(&xhat * self.value(gain)) + self.value(bias);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let value = self.value(a).select(Axis(0), &idx);
        let ng = self.ng(a);
        self.push(value, Op::GatherRows(a, idx), ng)
    }

    /// Output row `g` is the mean of the rows of `a` listed in `groups[g]`.
    /// Empty groups produce zero rows.
    pub fn segment_mean(&mut self, a: Var, groups: Rc<Vec<Vec<usize>>>) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros((groups.len(), src.ncols()));
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let mut out = value.row_mut(g);
            for &m in members {
                out += &src.row(m);
            }
            out /= members.len() as f64;
        }
        let ng = self.ng(a);
        self.push(value, Op::SegmentMean(a, groups), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Scales every row to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt().max(NORM_FLOOR);
            row /= n;
            norms.push(n);
        }
        let ng = self.ng(a);
        self.push(value, Op::L2Normalize(a, norms), ng)
    }

    /// n×c → n×1 row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(value, Op::RowSum(a), ng)
    }

    /// Mean of all entries, as a 1×1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Mat::from_elem((1, 1), m), Op::Mean(a), ng)
    }

    /// Reverse accumulation from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Mat::ones(self.value(output).raw_dim()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = &self.nodes[node].value;
        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, s) => {
                let k = self.value(*s)[[0, 0]];
                if self.ng(*a) {
                    self.accumulate(grads, *a, g * k);
                }
                if self.ng(*s) {
                    let ds = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, Mat::from_elem((1, 1), ds));
                }
            }
            Op::ScaleConst(a, k) => self.accumulate(grads, *a, g * *k),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulConst(a, mask) => self.accumulate(grads, *a, g * mask),
            Op::AddScaledConst(a, s, c) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*s) {
                    let ds = (g * c.as_ref()).sum();
                    self.accumulate(grads, *s, Mat::from_elem((1, 1), ds));
                }
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= gelu_grad(x));
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = drow.sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv -= yv * dot);
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if self.ng(*gain) {
                    let dg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *gain, dg);
                }
                if self.ng(*bias) {
                    self.accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let dxhat = g * self.value(*gain);
                    let cols = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let mean_dh = dh.sum() / cols;
                        let mean_dh_h = dh.dot(&h) / cols;
                        let inv = inv_std[r];
                        Zip::from(dx.row_mut(r))
                            .and(&dh)
                            .and(&h)
                            .for_each(|o, &a, &b| *o = inv * (a - mean_dh - b * mean_dh_h));
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::GatherRows(a, idx) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentMean(a, groups) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let share = &g.row(gi) / members.len() as f64;
                    for &m in members {
                        let mut row = d.row_mut(m);
                        row += &share;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).nrows();
                    self.accumulate(grads, p, g.slice(s![start..start + n, ..]).to_owned());
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).ncols();
                    self.accumulate(grads, p, g.slice(s![.., start..start + n]).to_owned());
                    start += n;
                }
            }
            Op::SliceCols(a, start) => {
                if self.ng(*a) {
                    let mut d = Mat::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    self.accumulate(grads, *a, d);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::L2Normalize(a, norms) => {
                let mut d = g.clone();
                for r in 0..d.nrows() {
                    let dot = g.row(r).dot(&y.row(r));
                    let n = norms[r];
                    Zip::from(d.row_mut(r))
                        .and(&y.row(r))
                        .for_each(|dv, &yv| *dv = (*dv - yv * dot) / n);
                }
                self.accumulate(grads, *a, d);
            }
            Op::RowSum(a) => {
                let cols = self.value(*a).ncols();
                let d = Mat::from_shape_fn((g.nrows(), cols), |(r, _)| g[[r, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let k = g[[0, 0]] / v.len().max(1) as f64;
                self.accumulate(grads, *a, Mat::from_elem(v.raw_dim(), k));
            }
        }
    }
}
