//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so the node list is topologically sorted
//! by construction and [`Var::backward`] is a single reverse sweep.
//! Tapes are rebuilt for every training step; parameters enter as leaves
//! and leave again as plain [`Tensor`]s.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::sync::Arc;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

/// A user-defined differentiable operation.
///
/// `backward` receives the input values, the forward output, and the
/// upstream gradient, and returns one gradient per input (`None` for inputs
/// that receive no gradient).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Spmm(Arc<SparseMatrix>, usize),
    Gram(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    FrobeniusSqRows(usize),
    ConcatCols(usize, usize),
    PermuteRows(usize, Arc<[usize]>),
    BceWithLogits(usize, Arc<Tensor>),
    WeightedSum(usize, Arc<Tensor>),
    AbsPearson(usize, usize),
    AbsCosine(usize, usize),
    ZScore(usize),
    Custom(Vec<usize>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is treated as data.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a custom operation whose forward value has already been
    /// computed by the caller.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Var<'t> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(output, Op::Custom(ids, op), requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, x: usize, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let value = self.nodes.borrow()[x].value.map(f);
        let rg = self.requires(&[x]);
        self.push(value, op, rg)
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a `requires_grad` leaf. Leaves that the loss does not
    /// depend on report zeros.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Owned gradient, zeros when the node received none.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()[0], v.shape()[1]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

pub fn softplus_scalar(x: f64) -> f64 {
    softplus(x)
}

fn is_constant(x: &[f64]) -> bool {
    match x.first() {
        None => true,
        Some(&f) => x.iter().all(|&v| v == f),
    }
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|Pearson(a, b)|`, zero when either side has zero variance.
pub(crate) fn abs_pearson_value(a: &[f64], b: &[f64]) -> f64 {
    if is_constant(a) || is_constant(b) {
        return 0.0;
    }
    let (ca, cb) = (centered(a), centered(b));
    let (saa, sbb, sab) = (dot(&ca, &ca), dot(&cb, &cb), dot(&ca, &cb));
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).abs().min(1.0)
}

fn abs_cosine_value(a: &[f64], b: &[f64]) -> f64 {
    let (naa, nbb) = (dot(a, a), dot(b, b));
    if naa == 0.0 || nbb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (naa * nbb).sqrt()).abs()
}

fn zscore_value(x: &[f64]) -> (Vec<f64>, f64) {
    if is_constant(x) {
        return (vec![0.0; x.len()], 0.0);
    }
    let c = centered(x);
    let sd = (dot(&c, &c) / x.len() as f64).sqrt();
    (c.iter().map(|v| v / sd).collect(), sd)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.value().shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a `1×1` node.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// A new constant leaf holding this node's current value.
    pub fn detach(self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.constant(v)
    }

    fn binary_same_shape(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(shape_err(name, &a, &b));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_vec(a.rows(), a.cols(), data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.cols() != b.rows() {
                return Err(shape_err("matmul", &a, &b));
            }
            kernels::matmul(&a, &b)
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    /// `sparse · self`. The sparse matrix is data and receives no gradient.
    pub fn spmm_by(self, sparse: &Arc<SparseMatrix>) -> Result<Var<'t>> {
        let value = sparse.spmm(&self.value())?;
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(value, Op::Spmm(Arc::clone(sparse), self.id), rg))
    }

    /// `self · selfᵀ`, symmetric by construction.
    pub fn gram(self) -> Var<'t> {
        let value = kernels::gram(&self.value());
        let rg = self.requires_grad();
        self.tape.push(value, Op::Gram(self.id), rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn hadamard(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(
            other,
            "hadamard",
            Op::Hadamard(self.id, other.id),
            |a, b| a * b,
        )
    }

    /// Adds a `1×c` row vector to every row of an `n×c` tensor.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (x, b) = (self.value(), bias.value());
            if b.rows() != 1 || b.cols() != x.cols() {
                return Err(shape_err("add_row_bias", &x, &b));
            }
            let c = x.cols();
            let mut out = x.clone();
            if c > 0 {
                for row in out.data_mut().chunks_mut(c) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
            }
            out
        };
        let rg = self.tape.requires(&[self.id, bias.id]);
        Ok(self.tape.push(value, Op::AddRowBias(self.id, bias.id), rg))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::AddScalar(self.id), |x| x + c)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sigmoid(self.id), sigmoid)
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.value().data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.tape.unary(self.id, Op::Log(self.id), f64::ln))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Square(self.id), |x| x * x)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient passes where the input
    /// lies inside the closed interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    fn nonempty(self, op: &'static str) -> Result<()> {
        if self.value().is_empty() {
            return Err(Error::Precondition(format!("{op} of an empty tensor")));
        }
        Ok(())
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.nonempty("sum")?;
        let value = Tensor::scalar(self.value().sum());
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Sum(self.id), rg))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.nonempty("mean")?;
        let value = {
            let x = self.value();
            Tensor::scalar(x.sum() / x.len() as f64)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Mean(self.id), rg))
    }

    /// Per-row sums as an `n×1` column.
    pub fn row_sum(self) -> Result<Var<'t>> {
        self.nonempty("row_sum")?;
        let value = {
            let x = self.value();
            Tensor::column((0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect())
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::RowSum(self.id), rg))
    }

    /// Per-row squared Euclidean norms as an `n×1` column.
    pub fn frobenius_sq_rows(self) -> Result<Var<'t>> {
        self.nonempty("frobenius_sq_rows")?;
        let value = {
            let x = self.value();
            Tensor::column(
                (0..x.rows())
                    .map(|r| x.row_slice(r).iter().map(|v| v * v).sum())
                    .collect(),
            )
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::FrobeniusSqRows(self.id), rg))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.rows() != b.rows() {
                return Err(shape_err("concat_cols", &a, &b));
            }
            let (p, q) = (a.cols(), b.cols());
            let mut data = Vec::with_capacity(a.rows() * (p + q));
            for r in 0..a.rows() {
                data.extend_from_slice(a.row_slice(r));
                data.extend_from_slice(b.row_slice(r));
            }
            Tensor::from_vec(a.rows(), p + q, data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::ConcatCols(self.id, other.id), rg))
    }

    /// Row `i` of the output is row `perm[i]` of the input.
    pub fn permute_rows(self, perm: &[usize]) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            validate_permutation(perm, x.rows())?;
            let c = x.cols();
            let mut data = Vec::with_capacity(x.len());
            for &src in perm {
                data.extend_from_slice(&x.data()[src * c..(src + 1) * c]);
            }
            Tensor::from_vec(x.rows(), c, data)?
        };
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(value, Op::PermuteRows(self.id, Arc::from(perm)), rg))
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against `targets`,
    /// evaluated in the logit domain.
    pub fn bce_with_logits(self, targets: &Arc<Tensor>) -> Result<Var<'t>> {
        self.nonempty("bce_with_logits")?;
        let value = {
            let l = self.value();
            if l.shape() != targets.shape() {
                return Err(shape_err("bce_with_logits", &l, targets));
            }
            let total: f64 = l
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&x, &t)| softplus(x) - t * x)
                .sum();
            Tensor::scalar(total / l.len() as f64)
        };
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(value, Op::BceWithLogits(self.id, Arc::clone(targets)), rg))
    }

    /// `Σ w ⊙ self` with constant weights.
    pub fn weighted_sum(self, weights: &Arc<Tensor>) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            if x.shape() != weights.shape() {
                return Err(shape_err("weighted_sum", &x, weights));
            }
            Tensor::scalar(dot(x.data(), weights.data()))
        };
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(value, Op::WeightedSum(self.id, Arc::clone(weights)), rg))
    }

    fn paired_vectors(self, other: Var<'t>, op: &'static str) -> Result<()> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() || a.cols() != 1 {
            return Err(shape_err(op, &a, &b));
        }
        Ok(())
    }

    /// Absolute Pearson correlation of two columns; zero if either is constant.
    pub fn abs_pearson(self, other: Var<'t>) -> Result<Var<'t>> {
        self.paired_vectors(other, "abs_pearson")?;
        if self.value().rows() < 2 {
            return Err(Error::Precondition(
                "correlation needs at least 2 entries".into(),
            ));
        }
        let value = Tensor::scalar(abs_pearson_value(self.value().data(), other.value().data()));
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::AbsPearson(self.id, other.id), rg))
    }

    /// Absolute cosine similarity of two columns; zero if either is zero.
    pub fn abs_cosine(self, other: Var<'t>) -> Result<Var<'t>> {
        self.paired_vectors(other, "abs_cosine")?;
        let value = Tensor::scalar(abs_cosine_value(self.value().data(), other.value().data()));
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::AbsCosine(self.id, other.id), rg))
    }

    /// Standardises a column to zero mean and unit population variance.
    /// A constant column maps to zeros.
    pub fn zscore(self) -> Result<Var<'t>> {
        self.nonempty("zscore")?;
        let value = {
            let x = self.value();
            Tensor::from_vec(x.rows(), x.cols(), zscore_value(x.data()).0)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::ZScore(self.id), rg))
    }

    /// Reverse sweep from this scalar node.
    pub fn backward(self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.len() != 1 {
            return Err(Error::Precondition(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::ones(1, 1));

        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, node, g, &mut grads);
        }

        for (id, node) in nodes.iter().enumerate() {
            let keep = matches!(node.op, Op::Leaf) && node.requires_grad;
            if !keep {
                grads[id] = None;
            } else if grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Permutation(format!(
            "length {} does not match {n} rows",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n {
            return Err(Error::Permutation(format!(
                "index {p} out of range for {n} rows"
            )));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::Permutation(format!("index {p} appears twice")));
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("operands share a shape")
}

fn propagate(nodes: &[Node], node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| &nodes[i].value;
    let gs = || g.data()[0];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(nodes, grads, *a, kernels::matmul_nt(&g, val(*b)));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, grads, *b, kernels::matmul_tn(val(*a), &g));
            }
        }
        Op::Spmm(s, d) => {
            let dd = s.spmm_transpose(&g).expect("shapes checked in forward");
            accumulate(nodes, grads, *d, dd);
        }
        Op::Gram(z) => {
            accumulate(nodes, grads, *z, kernels::gram_backward(&g, val(*z)));
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Hadamard(a, b) => {
            accumulate(nodes, grads, *a, zip_map(&g, val(*b), |x, y| x * y));
            accumulate(nodes, grads, *b, zip_map(&g, val(*a), |x, y| x * y));
        }
        Op::AddRowBias(x, b) => {
            let c = g.cols();
            let mut db = vec![0.0; c];
            if c > 0 {
                for row in g.data().chunks(c) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            accumulate(nodes, grads, *b, Tensor::row(db));
            accumulate(nodes, grads, *x, g);
        }
        Op::Scale(x, c) => accumulate(nodes, grads, *x, g.map(|v| c * v)),
        Op::AddScalar(x) => accumulate(nodes, grads, *x, g),
        Op::Sigmoid(x) => {
            let dx = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
            accumulate(nodes, grads, *x, dx);
        }
        Op::Relu(x) => {
            let dx = zip_map(&g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
            accumulate(nodes, grads, *x, dx);
        }
        Op::Exp(x) => accumulate(nodes, grads, *x, zip_map(&g, &node.value, |gv, y| gv * y)),
        Op::Log(x) => accumulate(nodes, grads, *x, zip_map(&g, val(*x), |gv, xv| gv / xv)),
        Op::Square(x) => accumulate(
            nodes,
            grads,
            *x,
            zip_map(&g, val(*x), |gv, xv| 2.0 * xv * gv),
        ),
        Op::Clamp(x, lo, hi) => {
            let dx = zip_map(
                &g,
                val(*x),
                |gv, xv| {
                    if xv >= *lo && xv <= *hi {
                        gv
                    } else {
                        0.0
                    }
                },
            );
            accumulate(nodes, grads, *x, dx);
        }
        Op::Sum(x) => {
            let s = val(*x).shape();
            accumulate(nodes, grads, *x, Tensor::full(s[0], s[1], gs()));
        }
        Op::Mean(x) => {
            let v = val(*x);
            let fill = gs() / v.len() as f64;
            accumulate(nodes, grads, *x, Tensor::full(v.rows(), v.cols(), fill));
        }
        Op::RowSum(x) => {
            let v = val(*x);
            let c = v.cols();
            let data = g
                .data()
                .iter()
                .flat_map(|&gv| std::iter::repeat_n(gv, c))
                .collect();
            accumulate(
                nodes,
                grads,
                *x,
                Tensor::from_vec(v.rows(), c, data).expect("shape"),
            );
        }
        Op::FrobeniusSqRows(x) => {
            let v = val(*x);
            let c = v.cols();
            let mut dx = v.clone();
            for (r, row) in dx.data_mut().chunks_mut(c.max(1)).enumerate() {
                let gv = g.data()[r];
                for e in row.iter_mut() {
                    *e *= 2.0 * gv;
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::ConcatCols(a, b) => {
            let (p, q) = (val(*a).cols(), val(*b).cols());
            let rows = g.rows();
            let mut da = Vec::with_capacity(rows * p);
            let mut db = Vec::with_capacity(rows * q);
            for r in 0..rows {
                let row = g.row_slice(r);
                da.extend_from_slice(&row[..p]);
                db.extend_from_slice(&row[p..]);
            }
            accumulate(
                nodes,
                grads,
                *a,
                Tensor::from_vec(rows, p, da).expect("shape"),
            );
            accumulate(
                nodes,
                grads,
                *b,
                Tensor::from_vec(rows, q, db).expect("shape"),
            );
        }
        Op::PermuteRows(x, perm) => {
            let c = g.cols();
            let mut dx = Tensor::zeros(g.rows(), c);
            for (i, &src) in perm.iter().enumerate() {
                let dst = &mut dx.data_mut()[src * c..(src + 1) * c];
                for (d, &gv) in dst.iter_mut().zip(g.row_slice(i)) {
                    *d += gv;
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::BceWithLogits(l, targets) => {
            let lv = val(*l);
            let scale = gs() / lv.len() as f64;
            let dl = zip_map(lv, targets, |x, t| (sigmoid(x) - t) * scale);
            accumulate(nodes, grads, *l, dl);
        }
        Op::WeightedSum(x, w) => {
            let s = gs();
            accumulate(nodes, grads, *x, w.map(|wv| wv * s));
        }
        Op::AbsPearson(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.rows();
            let (mut da, mut db) = (Tensor::zeros(n, 1), Tensor::zeros(n, 1));
            if !is_constant(av.data()) && !is_constant(bv.data()) {
                let (ca, cb) = (centered(av.data()), centered(bv.data()));
                let (saa, sbb, sab) = (dot(&ca, &ca), dot(&cb, &cb), dot(&ca, &cb));
                if saa > 0.0 && sbb > 0.0 {
                    let norm = (saa * sbb).sqrt();
                    let r = sab / norm;
                    let sign = if r >= 0.0 { 1.0 } else { -1.0 } * gs();
                    for i in 0..n {
                        da.data_mut()[i] = sign * (cb[i] / norm - r * ca[i] / saa);
                        db.data_mut()[i] = sign * (ca[i] / norm - r * cb[i] / sbb);
                    }
                }
            }
            accumulate(nodes, grads, *a, da);
            accumulate(nodes, grads, *b, db);
        }
        Op::AbsCosine(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.rows();
            let (mut da, mut db) = (Tensor::zeros(n, 1), Tensor::zeros(n, 1));
            let (naa, nbb) = (dot(av.data(), av.data()), dot(bv.data(), bv.data()));
            if naa > 0.0 && nbb > 0.0 {
                let norm = (naa * nbb).sqrt();
                let c = dot(av.data(), bv.data()) / norm;
                let sign = if c >= 0.0 { 1.0 } else { -1.0 } * gs();
                for i in 0..n {
                    let (x, y) = (av.data()[i], bv.data()[i]);
                    da.data_mut()[i] = sign * (y / norm - c * x / naa);
                    db.data_mut()[i] = sign * (x / norm - c * y / nbb);
                }
            }
            accumulate(nodes, grads, *a, da);
            accumulate(nodes, grads, *b, db);
        }
        Op::ZScore(x) => {
            let xv = val(*x);
            let (y, sd) = zscore_value(xv.data());
            let mut dx = Tensor::zeros(xv.rows(), xv.cols());
            if sd > 0.0 {
                let n = y.len() as f64;
                let gm = g.data().iter().sum::<f64>() / n;
                let gym = dot(g.data(), &y) / n;
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    *d = (g.data()[i] - gm - y[i] * gym) / sd;
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::Custom(inputs, op) => {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
            let dins = op.backward(&vals, &node.value, &g);
            for (&i, d) in inputs.iter().zip(dins) {
                if let Some(d) = d {
                    accumulate(nodes, grads, i, d);
                }
            }
        }
    }
}
