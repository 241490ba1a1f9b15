//! Label propagation network.
//!
//! Each ordered edge `(i, j)` gets a per-class attention
//! `α_ij = tanh(A · [V x_i ; V x_j])` in `[-1, 1]²`, computed once from the
//! contextualized features. A propagation layer then updates
//!
//! ```text
//! y_i ← softmax( y_i + Σ_{j ∈ N(i)} α_ij ⊙ y_j )
//! ```
//!
//! so a negative `α` lets a confident neighbour push the receiving node
//! towards the opposite class. The scalar variant replaces `tanh` with a
//! sigmoid over a single row `a`, giving one weight in `[0, 1]` shared by
//! both classes.

use rand::Rng;

use crate::fcn::{LabelState, Parameterized};
use crate::graph::{CrossModalGraph, DirectedEdges};
use crate::ndops::{Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Per-class signed weights, `tanh`, `A ∈ R^{2×2d}`.
    Signed,
    /// One non-negative weight broadcast to both classes, `sigmoid`, `a ∈ R^{1×2d}`.
    Scalar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpnModel {
    /// `2 × 2d` (signed) or `1 × 2d` (scalar).
    pub a: Tensor,
    /// `d × d`, applied to feature columns as `V x`.
    pub v: Tensor,
    /// Total label-attention layers including the initial prediction, so
    /// `num_layers - 1` propagation steps are applied.
    pub num_layers: usize,
    pub kind: AttentionKind,
}

impl LpnModel {
    pub fn new<R: Rng + ?Sized>(d: usize, num_layers: usize, kind: AttentionKind, rng: &mut R) -> Self {
        let heads = match kind {
            AttentionKind::Signed => 2,
            AttentionKind::Scalar => 1,
        };
        let v = Tensor::xavier_uniform(d, d, rng);
        let a = Tensor::xavier_uniform(heads, 2 * d, rng);
        LpnModel {
            a,
            v,
            num_layers,
            kind,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> LpnVars {
        LpnVars {
            a: tape.param(self.a.clone()),
            v: tape.param(self.v.clone()),
            kind: self.kind,
            num_layers: self.num_layers,
        }
    }

    fn bind_const(&self, tape: &mut Tape) -> LpnVars {
        LpnVars {
            a: tape.constant(self.a.clone()),
            v: tape.constant(self.v.clone()),
            kind: self.kind,
            num_layers: self.num_layers,
        }
    }
}

impl Parameterized for LpnModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("lpn.a".into(), &self.a), ("lpn.v".into(), &self.v)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.a, &mut self.v]
    }
}

/// Tape handles for an [`LpnModel`]; `params()` matches `params_mut` order.
#[derive(Clone, Copy, Debug)]
pub struct LpnVars {
    a: Var,
    v: Var,
    kind: AttentionKind,
    num_layers: usize,
}

impl LpnVars {
    pub fn params(&self) -> [Var; 2] {
        [self.a, self.v]
    }

    /// `m × 2` attention, one row per directed edge in `edges` order.
    pub fn attention(
        &self,
        tape: &mut Tape,
        xl: Var,
        edges: &DirectedEdges,
    ) -> Result<Var, TensorError> {
        let (d, vd) = (tape.shape(xl).1, tape.shape(self.v));
        if vd != (d, d) || tape.shape(self.a).1 != 2 * d {
            return Err(TensorError::ShapeMismatch {
                op: "compute_alpha",
                lhs: tape.shape(xl),
                rhs: vd,
            });
        }
        // A [V x_i ; V x_j] = A_l V x_i + A_r V x_j, so score each node once
        // and combine per edge instead of materialising the concatenation
        let vt = tape.transpose(self.v)?;
        let proj = tape.matmul(xl, vt)?;
        let a_l = tape.slice_cols(self.a, 0, d)?;
        let a_r = tape.slice_cols(self.a, d, d)?;
        let a_lt = tape.transpose(a_l)?;
        let a_rt = tape.transpose(a_r)?;
        let own = tape.matmul(proj, a_lt)?;
        let other = tape.matmul(proj, a_rt)?;
        let si = tape.gather_rows(own, edges.recv.clone())?;
        let sj = tape.gather_rows(other, edges.send.clone())?;
        let scores = tape.add(si, sj)?;
        match self.kind {
            AttentionKind::Signed => tape.tanh(scores),
            AttentionKind::Scalar => {
                let s = tape.sigmoid(scores)?;
                tape.concat_cols(s, s)
            }
        }
    }

    /// Applies `num_layers - 1` propagation steps starting from `y1`.
    pub fn propagate(
        &self,
        tape: &mut Tape,
        y1: Var,
        alpha: Var,
        edges: &DirectedEdges,
    ) -> Result<Var, TensorError> {
        let mut y = y1;
        for _ in 1..self.num_layers {
            y = propagate_step(tape, y, alpha, edges)?;
        }
        Ok(y)
    }
}

/// One label-attention layer on the tape.
pub fn propagate_step(
    tape: &mut Tape,
    y: Var,
    alpha: Var,
    edges: &DirectedEdges,
) -> Result<Var, TensorError> {
    let yj = tape.gather_rows(y, edges.send.clone())?;
    let msg = tape.hadamard(alpha, yj)?;
    let agg = tape.scatter_add_rows(msg, edges.recv.clone(), edges.n)?;
    let z = tape.add(y, agg)?;
    tape.row_softmax(z)
}

/// Attention values for every ordered edge of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAttention {
    recv: Vec<usize>,
    send: Vec<usize>,
    alpha: Tensor,
}

impl EdgeAttention {
    /// Attention from explicit per-ordered-edge values; `alpha(i, j)` must be
    /// supplied for both orientations of every edge of `g`.
    pub fn from_fn(
        g: &CrossModalGraph,
        mut f: impl FnMut(usize, usize) -> [f64; 2],
    ) -> EdgeAttention {
        let edges = g.directed_edges();
        let mut alpha = Tensor::zeros(edges.len(), 2);
        for k in 0..edges.len() {
            let v = f(edges.recv[k], edges.send[k]);
            alpha.row_mut(k).copy_from_slice(&v);
        }
        EdgeAttention {
            recv: edges.recv.to_vec(),
            send: edges.send.to_vec(),
            alpha,
        }
    }

    /// `α(i, j)`: attention applied when `i` receives from `j`.
    pub fn get(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        let start = self.recv.partition_point(|&r| r < i);
        let end = self.recv.partition_point(|&r| r <= i);
        self.send[start..end]
            .binary_search(&j)
            .ok()
            .map(|k| {
                let row = self.alpha.row(start + k);
                [row[0], row[1]]
            })
    }

    pub fn values(&self) -> &Tensor {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.recv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recv.is_empty()
    }

    /// `(i, j, α)` triples in receiver-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, [f64; 2])> + '_ {
        (0..self.len()).map(|k| {
            let row = self.alpha.row(k);
            (self.recv[k], self.send[k], [row[0], row[1]])
        })
    }
}

fn check_graph_rows(op: &'static str, t: &Tensor, g: &CrossModalGraph) -> Result<(), TensorError> {
    if t.rows() != g.n() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: t.shape(),
            rhs: (g.n(), t.cols()),
        });
    }
    Ok(())
}

pub fn compute_alpha(
    model: &LpnModel,
    xl: &Tensor,
    g: &CrossModalGraph,
) -> Result<EdgeAttention, TensorError> {
    check_graph_rows("compute_alpha", xl, g)?;
    let edges = g.directed_edges();
    let mut tape = Tape::new();
    let vars = model.bind_const(&mut tape);
    let x = tape.constant(xl.clone());
    let alpha = vars.attention(&mut tape, x, &edges)?;
    Ok(EdgeAttention {
        recv: edges.recv.to_vec(),
        send: edges.send.to_vec(),
        alpha: tape.value(alpha).clone(),
    })
}

pub fn propagate_once(
    y: &LabelState,
    att: &EdgeAttention,
    g: &CrossModalGraph,
) -> Result<LabelState, TensorError> {
    check_graph_rows("propagate_once", y.probs(), g)?;
    let edges = g.directed_edges();
    if att.len() != edges.len() {
        return Err(TensorError::ShapeMismatch {
            op: "propagate_once",
            lhs: att.alpha.shape(),
            rhs: (edges.len(), 2),
        });
    }
    let mut tape = Tape::new();
    let yv = tape.constant(y.probs().clone());
    let a = tape.constant(att.alpha.clone());
    let out = propagate_step(&mut tape, yv, a, &edges)?;
    Ok(LabelState::from_probs_unchecked(tape.value(out).clone()))
}

/// `ŷ^{L'}` from the initial prediction `y1` and the contextualized features.
pub fn propagate(
    model: &LpnModel,
    y1: &LabelState,
    xl: &Tensor,
    g: &CrossModalGraph,
) -> Result<LabelState, TensorError> {
    check_graph_rows("propagate", y1.probs(), g)?;
    let att = compute_alpha(model, xl, g)?;
    let mut y = y1.clone();
    for _ in 1..model.num_layers {
        y = propagate_once(&y, &att, g)?;
    }
    Ok(y)
}
