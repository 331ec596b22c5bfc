//! Named parameter trees.
//!
//! Parameter structs are generic over their leaf type so the same layout
//! serves stored weights (`Mat`), tape handles (`Var`), gradients and
//! optimizer moments. Visiting order is the declaration order and is the
//! order used by checkpoints.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Tape, Var};

pub trait ParamTree<T> {
    type Mapped<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::Mapped<U>;

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Every leaf with its dotted name, in visiting order.
pub fn named_leaves<T: Clone, P: ParamTree<T>>(tree: &P) -> Vec<(String, T)> {
    let mut out = Vec::new();
    tree.map_params("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

/// Places every leaf on the tape as a trainable parameter.
pub fn bind<P: ParamTree<Mat>>(tree: &P, tape: &mut Tape) -> P::Mapped<Var> {
    tree.map_params("", &mut |_, m| tape.param(m))
}

pub fn zeros_like<P: ParamTree<Mat>>(tree: &P) -> P::Mapped<Mat> {
    tree.map_params("", &mut |_, m| Mat::zeros(m.raw_dim()))
}

pub fn count_scalars<P: ParamTree<Mat>>(tree: &P) -> usize {
    let mut n = 0;
    tree.map_params("", &mut |_, m| n += m.len());
    n
}

/// Affine map `x W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: T,
    pub b: T,
}

impl<T> ParamTree<T> for Linear<T> {
    type Mapped<U> = Linear<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Linear<U> {
        Linear {
            w: f(&join(prefix, "w"), &self.w),
            b: f(&join(prefix, "b"), &self.b),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

impl Linear<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let y = tape.matmul(x, self.w);
        tape.add_row(y, self.b)
    }
}

/// Layer-norm gain and bias, both `1 × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

impl<T> ParamTree<T> for Norm<T> {
    type Mapped<U> = Norm<U>;

    fn map_params<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Norm<U> {
        Norm {
            gain: f(&join(prefix, "gain"), &self.gain),
            bias: f(&join(prefix, "bias"), &self.bias),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Norm<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.layer_norm(x, self.gain, self.bias)
    }
}

/// Seeded initializers.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// Glorot-uniform `rows × cols`.
    pub fn glorot(&mut self, rows: usize, cols: usize) -> Mat {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(rows, cols, bound)
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Mat {
        Mat::from_shape_simple_fn((rows, cols), || self.rng.random_range(-bound..bound))
    }

    pub fn linear(&mut self, input: usize, output: usize) -> Linear<Mat> {
        Linear {
            w: self.glorot(input, output),
            b: Mat::zeros((1, output)),
        }
    }

    pub fn norm(&mut self, dim: usize) -> Norm<Mat> {
        Norm {
            gain: Mat::ones((1, dim)),
            bias: Mat::zeros((1, dim)),
        }
    }
}

/// Dropout applied on the tape; a no-op in eval mode.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).raw_dim();
        let mask = Mat::from_shape_simple_fn(shape, || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.mul_const(x, mask)
    }
}
