//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly, so
//! the value of any node is available as soon as it is pushed; [`Graph::backward`]
//! then sweeps the tape once in reverse and yields adjoints of every tracked
//! leaf. Nodes built only from constants are not tracked and are skipped by
//! the reverse sweep.
//!
//! The primitive set is closed: affine maps (`matmul`, `add_bias`, `scale`,
//! `offset`), elementwise `add`/`sub`/`mul`, `tanh`, `square`, `exp`, `log`,
//! `softplus`, `sum`, plus `slice` for carving parameter blocks out of a flat
//! vector. Higher-order input derivatives of networks are written in terms of
//! these same primitives (see [`crate::mlp`]), so their parameter gradients come
//! out of the same sweep.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Tanh(Var),
    Square(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sum(Var),
    Slice { src: Var, offset: usize },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    tracked: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by one reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    adj: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v` flattened into a vector, zero-filled when untouched.
    pub fn to_vec(&self, v: Var, len: usize) -> Vec<T> {
        match self.get(v) {
            Some(m) => m.as_slice().to_vec(),
            None => vec![T::zero(); len],
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&mut self, value: T) -> Var {
        self.constant(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::MatMul(a, b), value, tracked)
    }

    /// `a + b 1ᵀ`: adds the column `b` to every column of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (ma, na) = self.shape(a);
        assert_eq!(self.shape(b), (ma, 1), "add_bias expects an {ma}x1 bias");
        let av = self.value(a);
        let bv = self.value(b);
        let value = Matrix::from_fn(ma, na, |r, c| av.get(r, c) + bv.get(r, 0));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::AddBias(a, b), value, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::Add(a, b), value, tracked)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::Sub(a, b), value, tracked)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::Mul(a, b), value, tracked)
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by expects a scalar node");
        let k = self.scalar_value(s);
        let value = self.value(a).map(|x| x * k);
        let tracked = self.tracked(a) || self.tracked(s);
        self.push(Op::ScaleBy(a, s), value, tracked)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a).map(|x| x * k);
        let tracked = self.tracked(a);
        self.push(Op::Scale(a, k), value, tracked)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn offset(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a).map(|x| x + k);
        let tracked = self.tracked(a);
        self.push(Op::Offset(a), value, tracked)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let tracked = self.tracked(a);
        self.push(Op::Tanh(a), value, tracked)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let tracked = self.tracked(a);
        self.push(Op::Square(a), value, tracked)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.exp());
        let tracked = self.tracked(a);
        self.push(Op::Exp(a), value, tracked)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.ln());
        let tracked = self.tracked(a);
        self.push(Op::Log(a), value, tracked)
    }

    /// `log(1 + exp(a))`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let tracked = self.tracked(a);
        self.push(Op::Softplus(a), value, tracked)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(Op::Sum(a), value, tracked)
    }

    /// `rows x cols` block read row-major from the flat storage of `src`,
    /// starting at `offset`.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let data = self.value(src).as_slice();
        assert!(
            offset + rows * cols <= data.len(),
            "slice [{offset}, {}) exceeds source of length {}",
            offset + rows * cols,
            data.len()
        );
        let value = Matrix::from_vec(rows, cols, data[offset..offset + rows * cols].to_vec())
            .expect("slice length");
        let tracked = self.tracked(src);
        self.push(Op::Slice { src, offset }, value, tracked)
    }

    /// One reverse sweep from the scalar node `output`.
    ///
    /// Fails if the output or any produced adjoint is not finite.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::config(format!(
                "backward needs a scalar output, got {:?}",
                out.shape()
            )));
        }
        if !out.is_finite() {
            return Err(Error::non_finite("objective value"));
        }
        let n = output.0 + 1;
        let mut adj: Vec<Option<Matrix<T>>> = vec![None; n];
        adj[output.0] = Some(Matrix::scalar(T::one()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut adj);
        }

        for (i, a) in adj.iter().enumerate() {
            if let Some(m) = a {
                if !m.is_finite() {
                    return Err(Error::non_finite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients { adj })
    }

    /// Gradient of `output` with respect to the leaf `wrt`, flattened.
    pub fn gradient(&self, output: Var, wrt: Var) -> Result<Vec<T>> {
        let len = self.value(wrt).len();
        Ok(self.backward(output)?.to_vec(wrt, len))
    }

    fn accumulate(
        &self,
        adj: &mut [Option<Matrix<T>>],
        v: Var,
        f: impl FnOnce(&mut Matrix<T>),
    ) {
        if !self.tracked(v) {
            return;
        }
        let slot = &mut adj[v.0];
        if slot.is_none() {
            let (r, c) = self.shape(v);
            *slot = Some(Matrix::zeros(r, c));
        }
        f(slot.as_mut().expect("initialized above"));
    }

    fn propagate(
        &self,
        op: &Op<T>,
        value: &Matrix<T>,
        g: &Matrix<T>,
        adj: &mut [Option<Matrix<T>>],
    ) {
        let two = T::one() + T::one();
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let bv = self.value(b);
                self.accumulate(adj, a, |da| g.matmul_into(false, bv, true, T::one(), da));
                let av = self.value(a);
                self.accumulate(adj, b, |db| av.matmul_into(true, g, false, T::one(), db));
            }
            Op::AddBias(a, b) => {
                self.accumulate(adj, a, |da| da.axpy(T::one(), g));
                self.accumulate(adj, b, |db| {
                    for r in 0..g.rows() {
                        let s: T = g.row_slice(r).iter().copied().sum();
                        let cur = db.get(r, 0);
                        db.set(r, 0, cur + s);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(adj, a, |da| da.axpy(T::one(), g));
                self.accumulate(adj, b, |db| db.axpy(T::one(), g));
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, |da| da.axpy(T::one(), g));
                self.accumulate(adj, b, |db| db.axpy(-T::one(), g));
            }
            Op::Mul(a, b) => {
                let bv = self.value(b);
                self.accumulate(adj, a, |da| zip_acc(da, g, bv, |gi, bi| gi * bi));
                let av = self.value(a);
                self.accumulate(adj, b, |db| zip_acc(db, g, av, |gi, ai| gi * ai));
            }
            Op::ScaleBy(a, s) => {
                let k = self.scalar_value(s);
                self.accumulate(adj, a, |da| da.axpy(k, g));
                let av = self.value(a);
                self.accumulate(adj, s, |ds| {
                    let dot: T = g
                        .as_slice()
                        .iter()
                        .zip(av.as_slice())
                        .map(|(&x, &y)| x * y)
                        .sum();
                    ds.as_mut_slice()[0] += dot;
                });
            }
            Op::Scale(a, k) => self.accumulate(adj, a, |da| da.axpy(k, g)),
            Op::Offset(a) => self.accumulate(adj, a, |da| da.axpy(T::one(), g)),
            Op::Tanh(a) => self.accumulate(adj, a, |da| {
                zip_acc(da, g, value, |gi, z| gi * (T::one() - z * z))
            }),
            Op::Square(a) => {
                let av = self.value(a);
                self.accumulate(adj, a, |da| zip_acc(da, g, av, |gi, x| two * x * gi));
            }
            Op::Exp(a) => self.accumulate(adj, a, |da| zip_acc(da, g, value, |gi, e| gi * e)),
            Op::Log(a) => {
                let av = self.value(a);
                self.accumulate(adj, a, |da| zip_acc(da, g, av, |gi, x| gi / x));
            }
            Op::Softplus(a) => {
                let av = self.value(a);
                self.accumulate(adj, a, |da| zip_acc(da, g, av, |gi, x| gi * sigmoid(x)));
            }
            Op::Sum(a) => {
                let gs = g.item();
                self.accumulate(adj, a, |da| {
                    for v in da.as_mut_slice() {
                        *v += gs;
                    }
                });
            }
            Op::Slice { src, offset } => self.accumulate(adj, src, |ds| {
                let dst = &mut ds.as_mut_slice()[offset..offset + g.len()];
                for (d, &gi) in dst.iter_mut().zip(g.as_slice()) {
                    *d += gi;
                }
            }),
        }
    }
}

fn zip_acc<T: Scalar>(acc: &mut Matrix<T>, g: &Matrix<T>, other: &Matrix<T>, f: impl Fn(T, T) -> T) {
    for ((d, &gi), &oi) in acc
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(other.as_slice())
    {
        *d += f(gi, oi);
    }
}
