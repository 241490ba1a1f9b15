//! Feature contextualization network: a stack of GCN layers
//!
//! ```text
//! x_i' = relu( x_i W_self + Σ_{j ∈ N(i)} x_j W_nbr / sqrt(|N(i)| |N(j)|) )
//! ```
//!
//! followed by a two-layer MLP head that turns the contextualized features
//! into `(p_real, p_fake)`.

use rand::Rng;

use crate::datamodel::Label;
use crate::graph::{CrossModalGraph, DirectedEdges};
use crate::ndops::{row_softmax_value, Tape, Tensor, TensorError, Var};

/// Anything that owns trainable tensors in a fixed order.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    /// `None` when the self term reuses `w_nbr`.
    pub w_self: Option<Tensor>,
    pub w_nbr: Tensor,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(h_in: usize, h_out: usize, shared_self: bool, rng: &mut R) -> Self {
        let w_self = (!shared_self).then(|| Tensor::xavier_uniform(h_in, h_out, rng));
        GcnLayer {
            w_self,
            w_nbr: Tensor::xavier_uniform(h_in, h_out, rng),
        }
    }

    pub fn h_in(&self) -> usize {
        self.w_nbr.rows()
    }

    pub fn h_out(&self) -> usize {
        self.w_nbr.cols()
    }

    pub fn forward(&self, x: &Tensor, g: &CrossModalGraph) -> Result<Tensor, TensorError> {
        check_rows("gcn_layer_forward", x, g)?;
        let mut tape = Tape::new();
        let edges = g.directed_edges();
        let xv = tape.constant(x.clone());
        let (vars, _) = GcnVars::bind(self, &mut tape, false);
        let out = vars.forward(&mut tape, xv, &edges)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug)]
struct GcnVars {
    w_self: Var,
    w_nbr: Var,
}

impl GcnVars {
    fn bind(layer: &GcnLayer, tape: &mut Tape, trainable: bool) -> (Self, Vec<Var>) {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let w_nbr = leaf(&layer.w_nbr);
        let (w_self, vars) = match &layer.w_self {
            Some(ws) => {
                let v = leaf(ws);
                (v, vec![v, w_nbr])
            }
            None => (w_nbr, vec![w_nbr]),
        };
        (GcnVars { w_self, w_nbr }, vars)
    }

    fn forward(&self, tape: &mut Tape, x: Var, edges: &DirectedEdges) -> Result<Var, TensorError> {
        let own = tape.matmul(x, self.w_self)?;
        let msg = tape.matmul(x, self.w_nbr)?;
        let agg = tape.edge_aggregate(msg, edges.gcn_index())?;
        let pre = tape.add(own, agg)?;
        tape.relu(pre)
    }
}

/// Two-layer MLP `in → hidden → 2` with ReLU between and biases on both layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpHead {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        MlpHead {
            w1: Tensor::xavier_uniform(input, hidden, rng),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::xavier_uniform(hidden, 2, rng),
            b2: Tensor::zeros(1, 2),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        MlpHead {
            w1: Tensor::zeros(input, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, 2),
            b2: Tensor::zeros(1, 2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcnModel {
    pub layers: Vec<GcnLayer>,
    pub head: MlpHead,
}

impl FcnModel {
    /// `num_layers` GCN layers `input → hidden → … → hidden`, then a head
    /// `last → hidden/2 → 2`. With zero layers the head reads the raw input.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        num_layers: usize,
        shared_self: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        let mut h_in = input;
        for _ in 0..num_layers {
            layers.push(GcnLayer::new(h_in, hidden, shared_self, rng));
            h_in = hidden;
        }
        let head = MlpHead::new(h_in, (hidden / 2).max(1), rng);
        FcnModel { layers, head }
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or(self.head.input_dim(), GcnLayer::h_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim(), GcnLayer::h_out)
    }

    pub fn bind(&self, tape: &mut Tape) -> FcnVars {
        self.bind_with(tape, true)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> FcnVars {
        let mut order = Vec::new();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (vars, listed) = GcnVars::bind(l, tape, trainable);
            order.extend(listed);
            layers.push(vars);
        }
        let mut leaf = |t: &Tensor| {
            let v = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            order.push(v);
            v
        };
        let head = [
            leaf(&self.head.w1),
            leaf(&self.head.b1),
            leaf(&self.head.w2),
            leaf(&self.head.b2),
        ];
        FcnVars {
            layers,
            head,
            order,
        }
    }
}

impl Parameterized for FcnModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            if let Some(ws) = &l.w_self {
                out.push((format!("fcn.layer{k}.w_self"), ws));
            }
            out.push((format!("fcn.layer{k}.w_nbr"), &l.w_nbr));
        }
        out.push(("fcn.head.w1".into(), &self.head.w1));
        out.push(("fcn.head.b1".into(), &self.head.b1));
        out.push(("fcn.head.w2".into(), &self.head.w2));
        out.push(("fcn.head.b2".into(), &self.head.b2));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Some(ws) = &mut l.w_self {
                out.push(ws);
            }
            out.push(&mut l.w_nbr);
        }
        let h = &mut self.head;
        out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        out
    }
}

/// Tape handles for an [`FcnModel`]; `order` matches [`Parameterized::params_mut`].
#[derive(Clone, Debug)]
pub struct FcnVars {
    layers: Vec<GcnVars>,
    head: [Var; 4],
    order: Vec<Var>,
}

impl FcnVars {
    pub fn params(&self) -> &[Var] {
        &self.order
    }

    /// `x^L`: all GCN layers applied in sequence.
    pub fn contextualize(
        &self,
        tape: &mut Tape,
        x: Var,
        edges: &DirectedEdges,
    ) -> Result<Var, TensorError> {
        let mut h = x;
        for l in &self.layers {
            h = l.forward(tape, h, edges)?;
        }
        Ok(h)
    }

    pub fn logits(&self, tape: &mut Tape, xl: Var) -> Result<Var, TensorError> {
        let [w1, b1, w2, b2] = self.head;
        let h = tape.matmul(xl, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, w2)?;
        tape.add_bias(o, b2)
    }

    /// Initial class probabilities `softmax(MLP(x^L))`.
    pub fn predict_initial(&self, tape: &mut Tape, xl: Var) -> Result<Var, TensorError> {
        let logits = self.logits(tape, xl)?;
        tape.row_softmax(logits)
    }
}

fn check_rows(op: &'static str, x: &Tensor, g: &CrossModalGraph) -> Result<(), TensorError> {
    if x.rows() != g.n() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: x.shape(),
            rhs: (g.n(), x.cols()),
        });
    }
    Ok(())
}

pub fn gcn_layer_forward(
    layer: &GcnLayer,
    x: &Tensor,
    g: &CrossModalGraph,
) -> Result<Tensor, TensorError> {
    layer.forward(x, g)
}

pub fn contextualize(
    model: &FcnModel,
    x1: &Tensor,
    g: &CrossModalGraph,
) -> Result<Tensor, TensorError> {
    check_rows("contextualize", x1, g)?;
    let mut tape = Tape::new();
    let vars = model.bind_with(&mut tape, false);
    let x = tape.constant(x1.clone());
    let out = vars.contextualize(&mut tape, x, &g.directed_edges())?;
    Ok(tape.value(out).clone())
}

pub fn predict_initial(model: &FcnModel, xl: &Tensor) -> Result<LabelState, TensorError> {
    let mut tape = Tape::new();
    let vars = model.bind_with(&mut tape, false);
    let x = tape.constant(xl.clone());
    let p = vars.predict_initial(&mut tape, x)?;
    Ok(LabelState {
        probs: tape.value(p).clone(),
    })
}

/// Per-node `(p_real, p_fake)` rows on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelState {
    probs: Tensor,
}

impl LabelState {
    pub const SIMPLEX_TOL: f64 = 1e-6;

    pub fn new(probs: Tensor) -> Result<Self, TensorError> {
        if probs.cols() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "label_state",
                lhs: probs.shape(),
                rhs: (probs.rows(), 2),
            });
        }
        let s = LabelState { probs };
        if s.max_simplex_violation() > Self::SIMPLEX_TOL {
            return Err(TensorError::NonFinite("label_state: rows off the simplex"));
        }
        Ok(s)
    }

    /// Softmax-normalises arbitrary 2-column scores.
    pub fn from_logits(logits: &Tensor) -> Result<Self, TensorError> {
        Self::new(row_softmax_value(logits))
    }

    pub(crate) fn from_probs_unchecked(probs: Tensor) -> Self {
        LabelState { probs }
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn into_probs(self) -> Tensor {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    /// Largest deviation of any row from the simplex (sum 1, entries ≥ 0).
    pub fn max_simplex_violation(&self) -> f64 {
        (0..self.probs.rows())
            .map(|r| {
                let row = self.probs.row(r);
                let sum_err = (row.iter().sum::<f64>() - 1.0).abs();
                let neg = row.iter().map(|&p| (-p).max(0.0)).fold(0.0, f64::max);
                if row.iter().any(|p| !p.is_finite()) {
                    f64::INFINITY
                } else {
                    sum_err.max(neg)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Hard labels; ties go to `Real`.
    pub fn argmax(&self) -> Vec<Label> {
        (0..self.probs.rows())
            .map(|r| {
                if self.probs.get(r, 1) > self.probs.get(r, 0) {
                    Label::Fake
                } else {
                    Label::Real
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent per-node double loop over the adjacency lists.
    fn oracle_layer(layer: &GcnLayer, x: &Tensor, g: &CrossModalGraph) -> Tensor {
        let w_self = layer.w_self.as_ref().unwrap_or(&layer.w_nbr);
        let (h_in, h_out) = (layer.h_in(), layer.h_out());
        let mut out = Tensor::zeros(x.rows(), h_out);
        for i in 0..x.rows() {
            for o in 0..h_out {
                let mut acc = 0.0;
                for k in 0..h_in {
                    acc += x.get(i, k) * w_self.get(k, o);
                }
                for &j in g.neighbors(i).unwrap() {
                    let c = 1.0 / ((g.degree(i) * g.degree(j)) as f64).sqrt();
                    let mut m = 0.0;
                    for k in 0..h_in {
                        m += x.get(j, k) * layer.w_nbr.get(k, o);
                    }
                    acc += c * m;
                }
                out.set(i, o, acc.max(0.0));
            }
        }
        out
    }

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn edgeless_layer_is_relu_of_self_term() {
        let g = CrossModalGraph::edgeless(3);
        let layer = GcnLayer {
            w_self: Some(Tensor::identity(2)),
            w_nbr: Tensor::filled(2, 2, 7.0),
        };
        let x = Tensor::from_rows(&[&[1.0, -1.0], &[-2.0, 3.0], &[0.5, 0.0]]);
        let y = gcn_layer_forward(&layer, &x, &g).unwrap();
        assert_eq!(y, x.map(|v| v.max(0.0)));
    }

    #[test]
    fn single_edge_copies_neighbor() {
        let g = CrossModalGraph::from_pairs(2, &[(0, 1)]).unwrap();
        let layer = GcnLayer {
            w_self: Some(Tensor::zeros(2, 2)),
            w_nbr: Tensor::identity(2),
        };
        let x = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = gcn_layer_forward(&layer, &x, &g).unwrap();
        assert_eq!(y, Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
    }

    #[test]
    fn layer_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = CrossModalGraph::from_pairs(4, &[(0, 1), (0, 2), (1, 2), (2, 3)]).unwrap();
        for shared in [false, true] {
            let layer = GcnLayer::new(3, 5, shared, &mut rng);
            let x = random_tensor(4, 3, &mut rng);
            let got = gcn_layer_forward(&layer, &x, &g).unwrap();
            let want = oracle_layer(&layer, &x, &g);
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn contextualize_matches_oracle_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = CrossModalGraph::from_pairs(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (0, 5)]).unwrap();
        let model = FcnModel::new(4, 6, 3, false, &mut rng);
        let x = random_tensor(6, 4, &mut rng);
        let got = contextualize(&model, &x, &g).unwrap();
        let mut want = x.clone();
        for l in &model.layers {
            want = oracle_layer(l, &want, &g);
        }
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn zero_layer_model_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = FcnModel::new(3, 8, 0, false, &mut rng);
        assert_eq!(model.head.input_dim(), 3);
        let x = random_tensor(4, 3, &mut rng);
        let g = CrossModalGraph::from_pairs(4, &[(0, 1)]).unwrap();
        assert_eq!(contextualize(&model, &x, &g).unwrap(), x);
    }

    #[test]
    fn edgeless_stack_reduces_to_self_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = FcnModel::new(3, 4, 2, false, &mut rng);
        let x = random_tensor(5, 3, &mut rng);
        let g = CrossModalGraph::edgeless(5);
        let got = contextualize(&model, &x, &g).unwrap();
        let mut want = x;
        for l in &model.layers {
            want = Tensor::matmul_raw(&want, l.w_self.as_ref().unwrap()).map(|v| v.max(0.0));
        }
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn isolated_nodes_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FcnModel::new(2, 4, 2, false, &mut rng);
        let g = CrossModalGraph::from_pairs(4, &[(0, 1)]).unwrap();
        let x = random_tensor(4, 2, &mut rng);
        let out = contextualize(&model, &x, &g).unwrap();
        assert!(out.all_finite());
    }

    #[test]
    fn row_count_must_match_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FcnModel::new(2, 4, 1, false, &mut rng);
        let x = random_tensor(3, 2, &mut rng);
        assert!(contextualize(&model, &x, &CrossModalGraph::edgeless(4)).is_err());
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = FcnModel::new(3, 4, 1, false, &mut rng);
        model.head = MlpHead::zeros(4, 2);
        let xl = random_tensor(3, 4, &mut rng);
        let p = predict_initial(&model, &xl).unwrap();
        for r in 0..3 {
            assert_eq!(p.probs().row(r), &[0.5, 0.5]);
        }
        assert_eq!(p.argmax(), vec![Label::Real; 3]);
    }

    #[test]
    fn saturated_logits_stay_on_simplex() {
        let p = LabelState::from_logits(&Tensor::from_rows(&[&[10.0, -10.0]])).unwrap();
        let row = p.probs().row(0);
        assert!((row[1] - 2.0611536181902037e-9).abs() < 1e-18);
        assert!((row[0] + row[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn head_matches_hand_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = FcnModel::new(3, 6, 1, false, &mut rng);
        let mut head = model.head.clone();
        head.b1 = random_tensor(1, 3, &mut rng);
        head.b2 = random_tensor(1, 2, &mut rng);
        let model = FcnModel { head, ..model };
        let xl = random_tensor(4, 6, &mut rng);
        let got = predict_initial(&model, &xl).unwrap();
        let h = &model.head;
        for r in 0..4 {
            let hidden: Vec<f64> = (0..3)
                .map(|c| {
                    let s: f64 = (0..6).map(|k| xl.get(r, k) * h.w1.get(k, c)).sum();
                    (s + h.b1.get(0, c)).max(0.0)
                })
                .collect();
            let logit = |c: usize| {
                hidden.iter().enumerate().map(|(k, v)| v * h.w2.get(k, c)).sum::<f64>()
                    + h.b2.get(0, c)
            };
            let (l0, l1) = (logit(0), logit(1));
            let p0 = 1.0 / (1.0 + (l1 - l0).exp());
            assert!((got.probs().get(r, 0) - p0).abs() < 1e-12);
        }
    }

    #[test]
    fn params_and_names_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = FcnModel::new(3, 4, 2, false, &mut rng);
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 8);
        assert_eq!(model.params_mut().len(), 8);
        let mut tape = Tape::new();
        assert_eq!(model.bind(&mut tape).params().len(), 8);

        let mut shared = FcnModel::new(3, 4, 2, true, &mut rng);
        assert_eq!(shared.params_mut().len(), 6);
        assert_eq!(shared.named_params().len(), 6);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = FcnModel::new(3, 4, 2, false, &mut rng);
        let pairs = [(0, 1), (1, 2), (3, 4), (0, 4)];
        let g = CrossModalGraph::from_pairs(5, &pairs).unwrap();
        let x = random_tensor(5, 3, &mut rng);
        let perm = [3, 0, 4, 1, 2]; // new index k holds old node perm[k]
        let mut inv = [0; 5];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let gp = CrossModalGraph::from_pairs(
            5,
            &pairs.map(|(i, j)| (inv[i], inv[j])),
        )
        .unwrap();
        let xp = x.select_rows(&perm);
        let out = contextualize(&model, &x, &g).unwrap();
        let outp = contextualize(&model, &xp, &gp).unwrap();
        assert!(outp.max_abs_diff(&out.select_rows(&perm)) < 1e-12);
    }
}
