use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{Tensor, TensorError};

/// Lower bound applied to probabilities before taking a log.
pub const PROB_EPS: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    EdgeAggregate(Var, Arc<EdgeIndex>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    ScaleRows(Var, Arc<[f64]>),
    MeanRows(Var, Arc<[usize]>),
    Sum(Var),
    SumSquares(Var),
    NegLogPick(Var, Arc<[(usize, usize)]>),
}

/// Weighted sparse row map used by [`Tape::edge_aggregate`]: entry `k` adds
/// `coeff[k]` times source row `send[k]` into output row `recv[k]` of an
/// `n`-row result.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeIndex {
    pub n: usize,
    pub recv: Arc<[usize]>,
    pub send: Arc<[usize]>,
    pub coeff: Arc<[f64]>,
}

impl EdgeIndex {
    fn check(&self, rows: usize) -> Result<(), TensorError> {
        if self.send.len() != self.recv.len() || self.coeff.len() != self.recv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "edge_aggregate",
                lhs: (self.recv.len(), 1),
                rhs: (self.send.len(), self.coeff.len()),
            });
        }
        if let Some(&i) = self.send.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                op: "edge_aggregate",
                index: i,
                len: rows,
            });
        }
        if let Some(&i) = self.recv.iter().find(|&&i| i >= self.n) {
            return Err(TensorError::IndexOutOfRange {
                op: "edge_aggregate",
                index: i,
                len: self.n,
            });
        }
        Ok(())
    }
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; `backward` replays them in exact reverse.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A tape that rejects any op producing NaN or infinity.
    pub fn checked() -> Self {
        Tape {
            checked: true,
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> Result<&Node, TensorError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(TensorError::DetachedNode);
        }
        Ok(&self.nodes[v.idx])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("var belongs to this tape").value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.node(v).ok().and_then(|n| n.grad.as_ref())
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFinite(op_name(&op)));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.idx].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.rows(), va.cols(), data).expect("shapes checked")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa.1 != sb.0 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = Tensor::matmul_raw(&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("hadamard", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Hadamard(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(bias)?.value.shape());
        if sb != (1, sa.1) {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut out = self.nodes[a.idx].value.clone();
        let b = self.nodes[bias.idx].value.row(0).to_vec();
        for r in 0..sa.0 {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa.0 != sb.0 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let (va, vb) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        let mut data = Vec::with_capacity(sa.0 * (sa.1 + sb.1));
        for r in 0..sa.0 {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let out = Tensor::from_vec(sa.0, sa.1 + sb.1, data)?;
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.node(a)?.value.shape();
        if start + len > c {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: c,
            });
        }
        let va = &self.nodes[a.idx].value;
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&va.row(row)[start..start + len]);
        }
        let out = Tensor::from_vec(r, len, data)?;
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    /// `out[recv[k]] += coeff[k] · a[send[k]]` over all entries of `index`.
    pub fn edge_aggregate(&mut self, a: Var, index: Arc<EdgeIndex>) -> Result<Var, TensorError> {
        let (r, c) = self.node(a)?.value.shape();
        index.check(r)?;
        let va = &self.nodes[a.idx].value;
        let mut out = Tensor::zeros(index.n, c);
        for k in 0..index.recv.len() {
            let w = index.coeff[k];
            let src = va.row(index.send[k]);
            for (o, x) in out.row_mut(index.recv[k]).iter_mut().zip(src) {
                *o += w * x;
            }
        }
        self.push(out, Op::EdgeAggregate(a, index), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = row_softmax_value(&self.node(a)?.value);
        self.push(out, Op::RowSoftmax(a), &[a])
    }

    /// Output row `k` is input row `idx[k]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let va = &self.node(a)?.value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: va.rows(),
            });
        }
        let out = va.select_rows(&idx);
        self.push(out, Op::GatherRows(a, idx), &[a])
    }

    /// Output has `n_rows` rows; input row `k` is summed into output row `idx[k]`.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        idx: Arc<[usize]>,
        n_rows: usize,
    ) -> Result<Var, TensorError> {
        let va = &self.node(a)?.value;
        if idx.len() != va.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: va.shape(),
                rhs: (idx.len(), 1),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(TensorError::IndexOutOfRange {
                op: "scatter_add_rows",
                index: bad,
                len: n_rows,
            });
        }
        let mut out = Tensor::zeros(n_rows, va.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(va.row(k)) {
                *o += x;
            }
        }
        self.push(out, Op::ScatterAddRows(a, idx), &[a])
    }

    /// Multiplies row `k` by the constant `w[k]`.
    pub fn scale_rows(&mut self, a: Var, w: Arc<[f64]>) -> Result<Var, TensorError> {
        let va = &self.node(a)?.value;
        if w.len() != va.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: va.shape(),
                rhs: (w.len(), 1),
            });
        }
        let mut out = va.clone();
        for (k, &s) in w.iter().enumerate() {
            for o in out.row_mut(k) {
                *o *= s;
            }
        }
        self.push(out, Op::ScaleRows(a, w), &[a])
    }

    /// `1 x cols` mean of the rows listed in `idx`.
    pub fn mean_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let va = &self.node(a)?.value;
        if idx.is_empty() {
            return Err(TensorError::EmptySelection("mean_rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(TensorError::IndexOutOfRange {
                op: "mean_rows",
                index: bad,
                len: va.rows(),
            });
        }
        let mut out = Tensor::zeros(1, va.cols());
        for &i in idx.iter() {
            for (o, x) in out.row_mut(0).iter_mut().zip(va.row(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        for o in out.data_mut() {
            *o *= inv;
        }
        self.push(out, Op::MeanRows(a, idx), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.node(a)?.value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.node(a)?.value.data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a), &[a])
    }

    /// `-Σ log(max(a[r, c], PROB_EPS))` over the listed `(row, col)` cells.
    pub fn neg_log_pick(&mut self, a: Var, picks: Arc<[(usize, usize)]>) -> Result<Var, TensorError> {
        let va = &self.node(a)?.value;
        let mut s = 0.0;
        for &(r, c) in picks.iter() {
            if r >= va.rows() || c >= va.cols() {
                return Err(TensorError::IndexOutOfRange {
                    op: "neg_log_pick",
                    index: r.max(c),
                    len: va.rows().min(va.cols()),
                });
            }
            s -= va.get(r, c).max(PROB_EPS).ln();
        }
        self.push(Tensor::scalar(s), Op::NegLogPick(a, picks), &[a])
    }

    /// Fills `grad` of every node that depends on a trainable leaf with dLoss/dNode.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.node(loss)?.value.shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        if !self.nodes[loss.idx].requires_grad {
            return Ok(());
        }
        self.nodes[loss.idx].grad = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.idx).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                for (v, gv) in self.input_grads(idx, &g) {
                    self.accumulate(v, gv);
                }
            }
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.idx];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Gradient contributions of node `idx` to its inputs, given its own gradient `g`.
    fn input_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let out = &self.nodes[idx].value;
        let val = |v: Var| &self.nodes[v.idx].value;
        let mut res = Vec::with_capacity(2);
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    res.push((a, Tensor::matmul_nt(g, val(b))));
                }
                if self.wants(b) {
                    res.push((b, Tensor::matmul_tn(val(a), g)));
                }
            }
            &Op::Transpose(a) => res.push((a, g.transpose())),
            &Op::Add(a, b) => {
                res.push((a, g.clone()));
                res.push((b, g.clone()));
            }
            &Op::Sub(a, b) => {
                res.push((a, g.clone()));
                res.push((b, g.map(|x| -x)));
            }
            &Op::Hadamard(a, b) => {
                res.push((a, elementwise(g, val(b), |g, y| g * y)));
                res.push((b, elementwise(g, val(a), |g, x| g * x)));
            }
            &Op::Scale(a, s) => res.push((a, g.map(|x| x * s))),
            &Op::AddBias(a, bias) => {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                res.push((a, g.clone()));
                res.push((bias, gb));
            }
            &Op::ConcatCols(a, b) => {
                let p = val(a).cols();
                let q = g.cols() - p;
                let mut ga = Vec::with_capacity(g.rows() * p);
                let mut gb = Vec::with_capacity(g.rows() * q);
                for r in 0..g.rows() {
                    ga.extend_from_slice(&g.row(r)[..p]);
                    gb.extend_from_slice(&g.row(r)[p..]);
                }
                let rows = g.rows();
                res.push((a, Tensor::from_vec(rows, p, ga).expect("split")));
                res.push((b, Tensor::from_vec(rows, q, gb).expect("split")));
            }
            &Op::SliceCols(a, start) => {
                let src = val(a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                res.push((a, ga));
            }
            Op::EdgeAggregate(a, index) => {
                let src = val(*a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                for k in 0..index.recv.len() {
                    let w = index.coeff[k];
                    let gr = g.row(index.recv[k]);
                    for (o, x) in ga.row_mut(index.send[k]).iter_mut().zip(gr) {
                        *o += w * x;
                    }
                }
                res.push((*a, ga));
            }
            &Op::Relu(a) => {
                let ga = elementwise(g, val(a), |g, x| if x > 0.0 { g } else { 0.0 });
                res.push((a, ga));
            }
            &Op::Tanh(a) => res.push((a, elementwise(g, out, |g, y| g * (1.0 - y * y)))),
            &Op::Sigmoid(a) => res.push((a, elementwise(g, out, |g, y| g * y * (1.0 - y)))),
            &Op::RowSoftmax(a) => {
                // y ⊙ (g − (g·y) 1ᵀ), row by row
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                res.push((a, ga));
            }
            Op::GatherRows(a, idx) => {
                let src = val(*a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                res.push((*a, ga));
            }
            Op::ScatterAddRows(a, idx) => res.push((*a, g.select_rows(idx))),
            Op::ScaleRows(a, w) => {
                let mut ga = g.clone();
                for (k, &s) in w.iter().enumerate() {
                    for o in ga.row_mut(k) {
                        *o *= s;
                    }
                }
                res.push((*a, ga));
            }
            Op::MeanRows(a, idx) => {
                let src = val(*a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                let inv = 1.0 / idx.len() as f64;
                for &i in idx.iter() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o += x * inv;
                    }
                }
                res.push((*a, ga));
            }
            &Op::Sum(a) => {
                let (r, c) = val(a).shape();
                res.push((a, Tensor::filled(r, c, g.data()[0])));
            }
            &Op::SumSquares(a) => {
                let s = g.data()[0];
                res.push((a, val(a).map(|x| 2.0 * x * s)));
            }
            Op::NegLogPick(a, picks) => {
                let src = val(*a);
                let s = g.data()[0];
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                for &(r, c) in picks.iter() {
                    let p = src.get(r, c);
                    // The clamp is flat below PROB_EPS.
                    if p > PROB_EPS {
                        ga.set(r, c, ga.get(r, c) - s / p);
                    }
                }
                res.push((*a, ga));
            }
        }
        res
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Hadamard(..) => "hadamard",
        Op::Scale(..) => "scale",
        Op::AddBias(..) => "add_bias",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::EdgeAggregate(..) => "edge_aggregate",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::RowSoftmax(..) => "row_softmax",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterAddRows(..) => "scatter_add_rows",
        Op::ScaleRows(..) => "scale_rows",
        Op::MeanRows(..) => "mean_rows",
        Op::Sum(..) => "sum",
        Op::SumSquares(..) => "sum_squares",
        Op::NegLogPick(..) => "neg_log_pick",
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row softmax with max subtraction.
pub fn row_softmax_value(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    out
}
