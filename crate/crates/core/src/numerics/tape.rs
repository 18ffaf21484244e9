//! Matrix-level reverse-mode differentiation.
//!
//! Every node on a [`Tape`] holds a [`Tensor2`] value. Operations append a
//! node and record which inputs produced it; [`Tape::backward`] walks the
//! nodes in reverse and accumulates vector-Jacobian products. Inputs are
//! always earlier on the tape than their outputs, so a single reverse sweep
//! over the node list is a valid topological order.
//!
//! ```
//! use intact_vae::numerics::{Tape, Tensor2};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor2::row_vector(&[1.0, 2.0]));
//! let sq = tape.square(x);
//! let loss = tape.sum_all(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor2;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a (B×k) + bias (1×k)` broadcast over rows.
    AddBias(Var, Var),
    /// `a (B×k) ⊙ col (B×1)` broadcast over columns.
    MulCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    SumAll(Var),
    RowSum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the leaf does not influence the loss.
    /// Interior-node gradients are released during the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` is disconnected.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor2) -> Tensor2 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor2::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("tape matmul: {e}"));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (_, cols) = self.shape(a);
        assert_eq!(
            self.shape(bias),
            (1, cols),
            "add_bias: bias must be 1x{cols}"
        );
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (rows, _) = self.shape(a);
        assert_eq!(
            self.shape(col),
            (rows, 1),
            "mul_col: column must be {rows}x1"
        );
        let c = self.value(col).data().to_vec();
        let mut value = self.value(a).clone();
        for (r, cv) in c.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v *= cv);
        }
        self.push(value, Op::MulCol(a, col))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { alpha * x });
        self.push(value, Op::LeakyRelu(a, alpha))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor2::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Per-row sums, `B×k → B×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let sums: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        self.push(Tensor2::column_vector(&sums), Op::RowSum(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(
            start <= end && end <= self.shape(a).1,
            "slice_cols out of range"
        );
        let value = self.value(a).slice_cols(start, end);
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor2::concat_cols(&values).unwrap_or_else(|e| panic!("tape concat: {e}"));
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Reverse sweep from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads, *a, g.matmul_t(bv));
                    accumulate(&mut grads, *b, av.t_matmul(&g));
                }
                Op::AddBias(a, bias) => {
                    accumulate(&mut grads, *bias, g.column_sums());
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let av = self.value(*a);
                    let cv = self.value(*col);
                    let mut ga = g.clone();
                    let mut gc = Tensor2::zeros(cv.rows(), 1);
                    for r in 0..g.rows() {
                        let c = cv.get(r, 0);
                        gc.set(
                            r,
                            0,
                            g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum(),
                        );
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= c);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *col, gc);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = g.zip_map(bv, |x, y| x / y);
                    // d(a/b)/db = -out/b
                    let gb = g
                        .zip_map(&node.value, |x, o| x * o)
                        .zip_map(bv, |x, y| -x / y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, alpha) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { alpha * x });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| x * sigmoid(v));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.zip_map(&node.value, |x, o| x * o)),
                Op::Log(a) => accumulate(&mut grads, *a, g.zip_map(self.value(*a), |x, v| x / v)),
                Op::Sqrt(a) => {
                    accumulate(&mut grads, *a, g.zip_map(&node.value, |x, o| 0.5 * x / o))
                }
                Op::Square(a) => accumulate(
                    &mut grads,
                    *a,
                    g.zip_map(self.value(*a), |x, v| 2.0 * x * v),
                ),
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor2::filled(r, c, g.get(0, 0)));
                }
                Op::RowSum(a) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor2::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        ga.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor2::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        accumulate(&mut grads, *p, g.slice_cols(offset, offset + w));
                        offset += w;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
