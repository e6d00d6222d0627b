//! Append-only computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves are either tracked
//! parameters or constants; every op node is tracked when any of its inputs
//! is. Gradients flow only through tracked nodes. A node used several times
//! accumulates the sum of its contributions.

use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    Recip,
    Neg,
    Scale(f64),
    AddConst(f64),
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Square => "square",
            UnaryKind::Recip => "recip",
            UnaryKind::Neg => "neg",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddConst(_) => "add_const",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Square => x * x,
            UnaryKind::Recip => 1.0 / x,
            UnaryKind::Neg => -x,
            UnaryKind::Scale(c) => c * x,
            UnaryKind::AddConst(c) => x + c,
        }
    }

    /// d(out)/d(in) given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Recip => -y * y,
            UnaryKind::Neg => -1.0,
            UnaryKind::Scale(c) => c,
            UnaryKind::AddConst(_) => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// How the right operand of a binary op is expanded to the left operand's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `1×c`, repeated over rows
    Row,
    /// rhs is `r×1`, repeated over columns
    Col,
    /// rhs is `1×1`
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Binary {
        kind: BinaryKind,
        bcast: Broadcast,
        lhs: usize,
        rhs: usize,
    },
    Unary {
        kind: UnaryKind,
        input: usize,
    },
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    SliceCols {
        input: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    Reshape(usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    MeanCols(usize),
    MaxCols {
        input: usize,
        argmax: Vec<usize>,
    },
    PairwiseSqDist(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a tracked node; panics for nodes outside the backward sweep.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.get(var)
            .unwrap_or_else(|| panic!("no gradient recorded for node {}", var.0))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_lse(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn add_into(dst: &mut Option<Tensor>, contribution: Tensor) {
    match dst {
        Some(acc) => {
            for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                *a += c;
            }
        }
        None => *dst = Some(contribution),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked leaf: gradients are computed for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        let node = self.nodes.get(var.0).ok_or(TensorError::UnknownNode(var.0))?;
        match node.value.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(TensorError::NotMatrix { op, shape: s.to_vec() }),
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        let id = self.nodes.len();
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name, node: id });
        }
        let tracked = inputs.iter().any(|&i| self.nodes[i].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(id))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul_bt")?;
        let (n, k2) = self.dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_bt", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push(
            "matmul_bt",
            Tensor::matrix(m, n, out)?,
            Op::MatMulBt(a.0, b.0),
            &[a.0, b.0],
        )
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (r, c) = self.dims(a, name)?;
        let (rb, cb) = self.dims(b, name)?;
        let bcast = if (rb, cb) == (r, c) {
            Broadcast::Same
        } else if (rb, cb) == (1, 1) {
            Broadcast::Scalar
        } else if rb == 1 && cb == c {
            Broadcast::Row
        } else if rb == r && cb == 1 {
            Broadcast::Col
        } else {
            return Err(self.mismatch(name, a, b));
        };
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let y = match bcast {
                    Broadcast::Same => bv[i * c + j],
                    Broadcast::Row => bv[j],
                    Broadcast::Col => bv[i],
                    Broadcast::Scalar => bv[0],
                };
                out.push(f(av[i * c + j], y));
            }
        }
        self.push(
            name,
            Tensor::matrix(r, c, out)?,
            Op::Binary {
                kind,
                bcast,
                lhs: a.0,
                rhs: b.0,
            },
            &[a.0, b.0],
        )
    }

    /// Elementwise sum; `b` may be a `1×c` row, an `r×1` column or a `1×1` scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.dims(a, "add_row")?;
        if self.dims(row, "add_row")? != (1, c) {
            return Err(self.mismatch("add_row", a, row));
        }
        self.binary(BinaryKind::Add, a, row)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| kind.apply(x));
        self.push(kind.name(), out, Op::Unary { kind, input: a.0 }, &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, a)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Recip, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(c), a)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::AddConst(c), a)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "softmax_rows")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v - m).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        self.push("softmax_rows", Tensor::matrix(r, c, out)?, Op::SoftmaxRows(a.0), &[a.0])
    }

    /// `r×c → r×1`, log of the row-sum of exponentials.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "logsumexp_rows")?;
        let x = self.value(a).data();
        let out = (0..r).map(|i| row_lse(&x[i * c..(i + 1) * c])).collect();
        self.push(
            "logsumexp_rows",
            Tensor::matrix(r, 1, out)?,
            Op::LogSumExpRows(a.0),
            &[a.0],
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::Invalid(format!(
                "slice_cols: columns {start}..{} out of range for width {c}",
                start + len
            )));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        self.push(
            "slice_cols",
            Tensor::matrix(r, len, out)?,
            Op::SliceCols { input: a.0, start },
            &[a.0],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_cols: no inputs".into()))?;
        let (r, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rp, cp) = self.dims(p, "concat_cols")?;
            if rp != r {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(cp);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            "concat_cols",
            Tensor::matrix(r, total, out)?,
            Op::ConcatCols(ids.clone()),
            &ids,
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshape(vec![rows, cols])?;
        self.push("reshape", value, Op::Reshape(a.0), &[a.0])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.push("transpose", value, Op::Transpose(a.0), &[a.0])
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a.0), &[a.0])
    }

    /// Column means, `r×c → 1×c`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "mean_cols")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&x[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.push("mean_cols", Tensor::matrix(1, c, out)?, Op::MeanCols(a.0), &[a.0])
    }

    /// Column maxima, `r×c → 1×c`. Ties resolve to the lowest row.
    pub fn max_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "max_cols")?;
        let x = self.value(a).data();
        let mut out = x[..c].to_vec();
        let mut argmax = vec![0usize; c];
        for i in 1..r {
            for j in 0..c {
                if x[i * c + j] > out[j] {
                    out[j] = x[i * c + j];
                    argmax[j] = i;
                }
            }
        }
        self.push(
            "max_cols",
            Tensor::matrix(1, c, out)?,
            Op::MaxCols { input: a.0, argmax },
            &[a.0],
        )
    }

    /// `D[i][j] = ‖a_i − b_j‖²` for `a: n×d`, `b: k×d`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims(a, "pairwise_sq_dist")?;
        let (k, d2) = self.dims(b, "pairwise_sq_dist")?;
        if d != d2 {
            return Err(self.mismatch("pairwise_sq_dist", a, b));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..k {
                let bj = &bv[j * d..(j + 1) * d];
                out.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        self.push(
            "pairwise_sq_dist",
            Tensor::matrix(n, k, out)?,
            Op::PairwiseSqDist(a.0, b.0),
            &[a.0, b.0],
        )
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Every tracked node the root depends on receives a gradient of the same
    /// shape as its value; tracked leaves the root does not depend on receive
    /// zeros. The graph is left untouched, so repeated sweeps are identical.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let node = self.nodes.get(root.0).ok_or(TensorError::UnknownNode(root.0))?;
        if !node.value.is_scalar() {
            return Err(TensorError::NonScalarRoot(node.value.shape().to_vec()));
        }
        if !node.tracked {
            return Err(TensorError::DetachedRoot(root.0));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::new(node.value.shape().to_vec(), vec![1.0])?);

        for id in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            self.propagate(node, g, lower)?;
        }

        for (id, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if node.tracked && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let tracked = |i: usize| self.nodes[i].tracked;
        let val = |i: usize| &self.nodes[i].value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2()?;
                let n = val(b).cols();
                if tracked(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, gd, val(b).data(), &mut da);
                    add_into(&mut grads[a], Tensor::matrix(m, k, da)?);
                }
                if tracked(b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(k, m, n, val(a).data(), gd, &mut db);
                    add_into(&mut grads[b], Tensor::matrix(k, n, db)?);
                }
            }
            &Op::MatMulBt(a, b) => {
                let (m, k) = val(a).dims2()?;
                let n = val(b).rows();
                if tracked(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nn(m, n, k, gd, val(b).data(), &mut da);
                    add_into(&mut grads[a], Tensor::matrix(m, k, da)?);
                }
                if tracked(b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(n, m, k, gd, val(a).data(), &mut db);
                    add_into(&mut grads[b], Tensor::matrix(n, k, db)?);
                }
            }
            &Op::Binary { kind, bcast, lhs, rhs } => {
                let (r, c) = val(lhs).dims2()?;
                let lv = val(lhs).data();
                let rv = val(rhs).data();
                let ridx = |i: usize, j: usize| match bcast {
                    Broadcast::Same => i * c + j,
                    Broadcast::Row => j,
                    Broadcast::Col => i,
                    Broadcast::Scalar => 0,
                };
                if tracked(lhs) {
                    let dl: Vec<f64> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => gd.to_vec(),
                        BinaryKind::Mul => (0..r * c).map(|p| gd[p] * rv[ridx(p / c, p % c)]).collect(),
                    };
                    add_into(&mut grads[lhs], Tensor::matrix(r, c, dl)?);
                }
                if tracked(rhs) {
                    let mut dr = vec![0.0; rv.len()];
                    for i in 0..r {
                        for j in 0..c {
                            let p = i * c + j;
                            dr[ridx(i, j)] += match kind {
                                BinaryKind::Add => gd[p],
                                BinaryKind::Sub => -gd[p],
                                BinaryKind::Mul => gd[p] * lv[p],
                            };
                        }
                    }
                    add_into(&mut grads[rhs], Tensor::new(val(rhs).shape().to_vec(), dr)?);
                }
            }
            &Op::Unary { kind, input } => {
                let x = val(input).data();
                let y = node.value.data();
                let dx: Vec<f64> = (0..x.len()).map(|p| gd[p] * kind.derivative(x[p], y[p])).collect();
                add_into(&mut grads[input], Tensor::new(val(input).shape().to_vec(), dx)?);
            }
            &Op::SoftmaxRows(input) => {
                let (r, c) = node.value.dims2()?;
                let y = node.value.data();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let span = i * c..(i + 1) * c;
                    let dot: f64 = gd[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                    for p in span {
                        dx[p] = y[p] * (gd[p] - dot);
                    }
                }
                add_into(&mut grads[input], Tensor::matrix(r, c, dx)?);
            }
            &Op::LogSumExpRows(input) => {
                let (r, c) = val(input).dims2()?;
                let x = val(input).data();
                let lse = node.value.data();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = gd[i] * (x[i * c + j] - lse[i]).exp();
                    }
                }
                add_into(&mut grads[input], Tensor::matrix(r, c, dx)?);
            }
            &Op::SliceCols { input, start } => {
                let (r, c) = val(input).dims2()?;
                let w = node.value.cols();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                add_into(&mut grads[input], Tensor::matrix(r, c, dx)?);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if tracked(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                        }
                        add_into(&mut grads[p], Tensor::matrix(r, w, dp)?);
                    }
                    offset += w;
                }
            }
            &Op::Reshape(input) => {
                add_into(&mut grads[input], g.reshape(val(input).shape().to_vec())?);
            }
            &Op::Transpose(input) => {
                add_into(&mut grads[input], g.transpose()?);
            }
            &Op::Sum(input) => {
                let x = val(input);
                add_into(
                    &mut grads[input],
                    Tensor::new(x.shape().to_vec(), vec![gd[0]; x.len()])?,
                );
            }
            &Op::Mean(input) => {
                let x = val(input);
                let v = gd[0] / x.len() as f64;
                add_into(&mut grads[input], Tensor::new(x.shape().to_vec(), vec![v; x.len()])?);
            }
            &Op::MeanCols(input) => {
                let (r, c) = val(input).dims2()?;
                let mut dx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    dx.extend(gd.iter().map(|v| v / r as f64));
                }
                add_into(&mut grads[input], Tensor::matrix(r, c, dx)?);
            }
            Op::MaxCols { input, argmax } => {
                let (r, c) = val(*input).dims2()?;
                let mut dx = vec![0.0; r * c];
                for (j, &i) in argmax.iter().enumerate() {
                    dx[i * c + j] = gd[j];
                }
                add_into(&mut grads[*input], Tensor::matrix(r, c, dx)?);
            }
            &Op::PairwiseSqDist(a, b) => {
                let (n, d) = val(a).dims2()?;
                let k = val(b).rows();
                let av = val(a).data();
                let bv = val(b).data();
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; k * d];
                for i in 0..n {
                    for j in 0..k {
                        let w = 2.0 * gd[i * k + j];
                        for t in 0..d {
                            let diff = w * (av[i * d + t] - bv[j * d + t]);
                            da[i * d + t] += diff;
                            db[j * d + t] -= diff;
                        }
                    }
                }
                if tracked(a) {
                    add_into(&mut grads[a], Tensor::matrix(n, d, da)?);
                }
                if tracked(b) {
                    add_into(&mut grads[b], Tensor::matrix(k, d, db)?);
                }
            }
        }
        Ok(())
    }
}
