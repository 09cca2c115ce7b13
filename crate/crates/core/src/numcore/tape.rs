//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because a node can only reference earlier nodes.
//!
//! Gradients accumulate into leaves across calls; clearing them is explicit
//! via [`Tape::zero_grads`]. This lets a caller read the gradient of one
//! objective, then backpropagate a second objective on top of it.

use super::linalg::{cholesky_jittered, cholesky_solve, DEFAULT_JITTER};
use super::Matrix;
use crate::Result;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    ExpM1(Var),
    Sum(Var),
    MeanRows(Var),
    Transpose(Var),
    ConcatCols(Var, Var),
    Symmetrize(Var),
    // chol: factor of the symmetrized (possibly jittered) left operand.
    SpdSolve { s: Var, b: Var, chol: Matrix },
    SpdLogDet { s: Var, chol: Matrix },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Accumulated gradient of a leaf (zeros when nothing has flowed into it).
    pub fn grad(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- operations ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    fn broadcast(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let am = self.value(a);
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "broadcast operand must be a single row");
        assert_eq!(am.cols(), r.cols(), "broadcast column mismatch");
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o = f(*o, x);
            }
        }
        out
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.broadcast(a, row, |x, y| x + y);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.broadcast(a, row, |x, y| x - y);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::SubRow(a, row), rg)
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.broadcast(a, row, |x, y| x * y);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddConst(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    /// `exp(x) − 1`, accurate near zero.
    pub fn expm1(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp_m1);
        let rg = self.rg(a);
        self.push(v, Op::ExpM1(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// `[a | b]`; both operands need the same row count.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.rows(), bm.rows(), "concat_cols row mismatch");
        let (ca, cb) = (am.cols(), bm.cols());
        let mut out = Matrix::zeros(am.rows(), ca + cb);
        for i in 0..am.rows() {
            let row = out.row_mut(i);
            row[..ca].copy_from_slice(am.row(i));
            row[ca..].copy_from_slice(bm.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatCols(a, b), rg)
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self, a: Var) -> Var {
        let v = self.value(a).symmetrized();
        let rg = self.rg(a);
        self.push(v, Op::Symmetrize(a), rg)
    }

    /// `S⁻¹·B` for symmetric positive-definite `S`.
    ///
    /// `S` is symmetrized before factorization and retried once with
    /// [`DEFAULT_JITTER`] on the diagonal if the plain factorization fails.
    pub fn spd_solve(&mut self, s: Var, b: Var) -> Result<Var> {
        let (chol, _) = cholesky_jittered(&self.value(s).symmetrized(), DEFAULT_JITTER)?;
        let v = cholesky_solve(&chol, self.value(b));
        let rg = self.rg(s) || self.rg(b);
        Ok(self.push(v, Op::SpdSolve { s, b, chol }, rg))
    }

    /// `ln det S` for symmetric positive-definite `S`, as a `1 × 1` node.
    pub fn spd_logdet(&mut self, s: Var) -> Result<Var> {
        let (chol, _) = cholesky_jittered(&self.value(s).symmetrized(), DEFAULT_JITTER)?;
        let v = Matrix::scalar(super::linalg::cholesky_logdet(&chol));
        let rg = self.rg(s);
        Ok(self.push(v, Op::SpdLogDet { s, chol }, rg))
    }

    // ---- reverse sweep -----------------------------------------------

    /// Backpropagates from a scalar node, adding `∂seed/∂leaf` into every
    /// differentiable leaf's accumulated gradient.
    pub fn backward(&mut self, seed: Var) {
        assert_eq!(self.value(seed).shape(), (1, 1), "backward seed must be a scalar");
        let mut adj: Vec<Option<Matrix>> = (0..=seed.0).map(|_| None).collect();
        adj[seed.0] = Some(Matrix::scalar(1.0));

        for i in (0..=seed.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.grads[i] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.matmul_nt(self.value(*b));
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).matmul_tn(&g);
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.zip_map(self.value(*b), |x, y| x * y);
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = g.zip_map(self.value(*a), |x, y| x * y);
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::AddRow(a, r) | Op::SubRow(a, r) => {
                    let sign = if matches!(node.op, Op::SubRow(..)) { -1.0 } else { 1.0 };
                    if self.rg(*r) {
                        let cs = col_sums(&g).scale(sign);
                        accumulate(&mut adj, *r, cs);
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::MulRow(a, r) => {
                    let rv = self.value(*r);
                    if self.rg(*r) {
                        let prod = g.zip_map(self.value(*a), |x, y| x * y);
                        accumulate(&mut adj, *r, col_sums(&prod));
                    }
                    if self.rg(*a) {
                        let mut ga = g;
                        for k in 0..ga.rows() {
                            for (x, &y) in ga.row_mut(k).iter_mut().zip(rv.as_slice()) {
                                *x *= y;
                            }
                        }
                        accumulate(&mut adj, *a, ga);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::AddConst(a) => accumulate(&mut adj, *a, g),
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                }
                Op::ExpM1(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (y + 1.0));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.item()));
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let row: Vec<f64> = g.as_slice().iter().map(|v| v / n as f64).collect();
                    accumulate(&mut adj, *a, Matrix::repeat_row(&row, n));
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    if self.rg(*a) {
                        let mut ga = Matrix::zeros(g.rows(), ca);
                        for k in 0..g.rows() {
                            ga.row_mut(k).copy_from_slice(&g.row(k)[..ca]);
                        }
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        let mut gb = Matrix::zeros(g.rows(), cb);
                        for k in 0..g.rows() {
                            gb.row_mut(k).copy_from_slice(&g.row(k)[ca..]);
                        }
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Symmetrize(a) => accumulate(&mut adj, *a, g.symmetrized()),
                Op::SpdSolve { s, b, chol } => {
                    // X = S⁻¹B:  B̄ = S⁻¹X̄,  S̄ = sym(−B̄ Xᵀ)
                    let gb = cholesky_solve(chol, &g);
                    if self.rg(*s) {
                        let gs = gb.matmul_nt(&node.value).scale(-1.0).symmetrized();
                        accumulate(&mut adj, *s, gs);
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::SpdLogDet { s, chol } => {
                    let n = chol.rows();
                    let inv = cholesky_solve(chol, &Matrix::identity(n));
                    accumulate(&mut adj, *s, inv.symmetrized().scale(g.item()));
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for k in 0..g.rows() {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(g.row(k)) {
            *o += x;
        }
    }
    out
}
