//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] once on a scalar output sweeps the record in reverse
//! and leaves gradients on every node that depends on a parameter.

mod adam;
mod checkpoint;
mod net;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use net::{FeatureNet, NetConfig, Parameter};

use crate::error::{Error, Result};
use crate::linalg::dense::gemm;
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation with a hand-written adjoint, recorded on the tape alongside the
/// built-in primitives.
pub trait CustomOp<T: Real>: Send {
    /// Gradients with respect to each input, given the output gradient.
    /// Entries may be `None` where `needs[i]` is false.
    fn backward(
        &self,
        grad: &Matrix<T>,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Matrix<T>>>>;
}

enum Op<T: Real> {
    Leaf,
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LeakyRelu(Var, T),
    Exp(Var),
    Sum(Var),
    SquaredNorm(Var),
    PadColumns(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of a forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Matrix<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(s: (usize, usize)) -> String {
    format!("{}x{}", s.0, s.1)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient left by [`Tape::backward`]; `None` for nodes the loss does
    /// not depend on through a parameter.
    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// `op(a) · op(b)`, transposing the operands where flagged.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let inner_a = if ta { sa.0 } else { sa.1 };
        let inner_b = if tb { sb.1 } else { sb.0 };
        if inner_a != inner_b {
            return Err(Error::dims("matmul", shape_str(sa), shape_str(sb)));
        }
        let value = gemm(T::one(), self.value(a), ta, self.value(b), tb);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, ta, b, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(op, shape_str(self.shape(a)), shape_str(self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).add(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).sub(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Adds the `1 × c` row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb != (1, sa.1) {
            return Err(Error::dims("add_row", format!("1x{}", sa.1), shape_str(sb)));
        }
        let mut value = self.value(a).clone();
        let row = self.value(b).as_slice().to_vec();
        for i in 0..sa.0 {
            for (x, &y) in value.row_mut(i).iter_mut().zip(&row) {
                *x += y;
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Row-wise softmax, evaluated after subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.shape();
        if c == 0 {
            return Err(Error::InvalidInput("softmax over an empty row".into()));
        }
        let mut value = Matrix::zeros(r, c);
        for i in 0..r {
            let row = x.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let out = value.row_mut(i);
            let mut total = T::zero();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("softmax scores"));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        let rg = self.needs(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::exp);
        let rg = self.needs(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Squared Frobenius norm as a `1 × 1` node.
    pub fn squared_norm(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).frobenius_norm_sq());
        let rg = self.needs(&[a]);
        self.push(value, Op::SquaredNorm(a), rg)
    }

    /// Appends zero columns up to `width`.
    pub fn pad_columns(&mut self, a: Var, width: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.shape();
        if width < c {
            return Err(Error::dims("pad_columns", format!(">= {c} columns"), width));
        }
        let mut value = Matrix::zeros(r, width);
        for i in 0..r {
            value.row_mut(i)[..c].copy_from_slice(x.row(i));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::PadColumns(a), rg))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Matrix<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = self.needs(&inputs);
        self.push(value, Op::Custom { inputs, op }, rg)
    }

    fn accumulate(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        match &mut grads[v.0] {
            Some(existing) => existing.axpy(T::one(), &g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from the scalar `loss`. A tape supports one sweep; a
    /// second call fails with [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::dims("backward", "1x1", shape_str(self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::MatMul { a, ta, b, tb } => {
                    if rg(a) {
                        let ga = if ta {
                            gemm(T::one(), val(b), tb, &g, true)
                        } else {
                            gemm(T::one(), &g, false, val(b), !tb)
                        };
                        Self::accumulate(&mut grads, a, ga);
                    }
                    if rg(b) {
                        let gb = if tb {
                            gemm(T::one(), &g, true, val(a), ta)
                        } else {
                            gemm(T::one(), val(a), !ta, &g, false)
                        };
                        Self::accumulate(&mut grads, b, gb);
                    }
                }
                &Op::Add(a, b) => {
                    if rg(a) {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if rg(b) {
                        Self::accumulate(&mut grads, b, g);
                    }
                }
                &Op::Sub(a, b) => {
                    if rg(a) {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if rg(b) {
                        Self::accumulate(&mut grads, b, g.scale(-T::one()));
                    }
                }
                &Op::Mul(a, b) => {
                    if rg(a) {
                        Self::accumulate(&mut grads, a, g.zip_map(val(b), |x, y| x * y));
                    }
                    if rg(b) {
                        Self::accumulate(&mut grads, b, g.zip_map(val(a), |x, y| x * y));
                    }
                }
                &Op::Scale(a, s) => Self::accumulate(&mut grads, a, g.scale(s)),
                &Op::AddRow(a, b) => {
                    if rg(b) {
                        let mut col_sums = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (s, &x) in col_sums.as_mut_slice().iter_mut().zip(g.row(i)) {
                                *s += x;
                            }
                        }
                        Self::accumulate(&mut grads, b, col_sums);
                    }
                    if rg(a) {
                        Self::accumulate(&mut grads, a, g);
                    }
                }
                &Op::Transpose(a) => Self::accumulate(&mut grads, a, g.transpose()),
                &Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let inner: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in ga.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - inner);
                        }
                    }
                    Self::accumulate(&mut grads, a, ga);
                }
                &Op::LeakyRelu(a, slope) => {
                    let ga = g.zip_map(val(a), |q, x| if x > T::zero() { q } else { slope * q });
                    Self::accumulate(&mut grads, a, ga);
                }
                &Op::Exp(a) => Self::accumulate(&mut grads, a, g.zip_map(&node.value, |q, y| q * y)),
                &Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    Self::accumulate(&mut grads, a, Matrix::filled(r, c, g.as_slice()[0]));
                }
                &Op::SquaredNorm(a) => {
                    let s = T::lit(2.0) * g.as_slice()[0];
                    Self::accumulate(&mut grads, a, val(a).scale(s));
                }
                &Op::PadColumns(a) => {
                    let c = val(a).cols();
                    let ga = Matrix::from_fn(g.rows(), c, |i, j| g[(i, j)]);
                    Self::accumulate(&mut grads, a, ga);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Matrix<T>> = inputs.iter().map(|&v| val(v)).collect();
                    let needs: Vec<bool> = inputs.iter().map(|&v| rg(v)).collect();
                    let input_grads = op.backward(&g, &values, &node.value, &needs)?;
                    for ((&v, gi), need) in inputs.iter().zip(input_grads).zip(needs) {
                        if let (Some(gi), true) = (gi, need) {
                            if gi.shape() != val(v).shape() {
                                return Err(Error::dims(
                                    "custom backward",
                                    shape_str(val(v).shape()),
                                    shape_str(gi.shape()),
                                ));
                            }
                            Self::accumulate(&mut grads, v, gi);
                        }
                    }
                }
            }
        }
        // keep only what callers can ask for: leaves
        for (id, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[id].op, Op::Leaf) {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let mut t = Tape::new();
        let p = t.param(Matrix::from_fn(2, 3, |i, j| (i + j) as f64));
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert_eq!(t.grad(p).unwrap().as_slice(), &[1.0; 6]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_the_input() {
        let x = Matrix::from_fn(3, 2, |i, j| i as f64 - 0.7 * j as f64);
        let mut t = Tape::new();
        let p = t.param(x.clone());
        let s = t.squared_norm(p);
        t.backward(s).unwrap();
        assert!(t.grad(p).unwrap().max_abs_diff(&x.scale(2.0)) < 1e-12);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut t = Tape::new();
        let p = t.param(Matrix::filled(1, 1, 2.0));
        let s = t.squared_norm(p);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::TapeConsumed)));
    }

    #[test]
    fn fan_out_accumulates() {
        // f = sum(p ⊙ p) + sum(p), df/dp = 2p + 1
        let mut t = Tape::new();
        let p = t.param(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let sq = t.mul(p, p).unwrap();
        let a = t.sum(sq);
        let b = t.sum(p);
        let f = t.add(a, b).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(p).unwrap().as_slice(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t: Tape<f64> = Tape::new();
        let c = t.constant(Matrix::identity(2));
        let p = t.param(Matrix::identity(2));
        let m = t.matmul(c, p).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert!(t.grad(p).is_some());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        assert!(t.matmul_t(a, false, b, true).is_ok());
        let r = t.constant(Matrix::zeros(1, 2));
        assert!(t.add_row(a, r).is_err());
        let big = t.param(Matrix::zeros(2, 2));
        let s = t.sum(big);
        let not_scalar = t.add(a, b).unwrap();
        assert!(t.backward(not_scalar).is_err());
        t.backward(s).unwrap();
    }
}
