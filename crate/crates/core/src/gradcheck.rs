//! Central finite-difference checks of the tape's gradients, op by op and
//! through the complete training objective.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Dataset, Label, Split, TweetRecord};
use crate::fcn::Parameterized;
use crate::graph::CrossModalGraph;
use crate::ndops::{EdgeIndex, Tape, Tensor, TensorError, Var};
use crate::trainer::{TrainConfig, TrainError, TrainedModel, TrainingProblem, Variant};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub seed: u64,
    pub entries: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `loss` with respect to every entry of `params`.
pub fn numeric_grad<E>(
    params: &[Tensor],
    loss: impl Fn(&[Tensor]) -> Result<f64, E>,
) -> Result<Vec<Tensor>, E> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let mut g = Tensor::zeros(params[k].rows(), params[k].cols());
        for i in 0..params[k].len() {
            let x0 = params[k].data()[i];
            work[k].data_mut()[i] = x0 + STEP;
            let up = loss(&work)?;
            work[k].data_mut()[i] = x0 - STEP;
            let down = loss(&work)?;
            work[k].data_mut()[i] = x0;
            g.data_mut()[i] = (up - down) / (2.0 * STEP);
        }
        out.push(g);
    }
    Ok(out)
}

pub fn max_rel_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

type OpFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

/// Checks `f` (which must return a 1×1 value) with respect to all `inputs`.
pub fn check_op(name: &str, seed: u64, inputs: Vec<Tensor>, f: &OpFn) -> Result<GradReport, TensorError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();
    let numeric = numeric_grad(&inputs, |ts| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ts.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok::<f64, TensorError>(t.value(l).data()[0])
    })?;
    Ok(GradReport {
        name: name.to_string(),
        seed,
        entries: inputs.iter().map(Tensor::len).sum(),
        max_rel_error: max_rel_error(&analytic, &numeric),
    })
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// Values in `±[0.2, 1]`, away from the relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// `Σ out ⊙ R` for a fixed random `R`, turning any op into a scalar.
fn project(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var, TensorError> {
    let w = tape.constant(r.clone());
    let h = tape.hadamard(out, w)?;
    tape.sum(h)
}

/// Gradient checks of every tape op for one seed.
pub fn op_suite(seed: u64) -> Result<Vec<GradReport>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, out_shape: (usize, usize), f: Box<OpFn>, rng: &mut ChaCha8Rng| {
        let r = uniform(rng, out_shape.0, out_shape.1, -1.0, 1.0);
        let wrapped = move |t: &mut Tape, v: &[Var]| {
            let o = f(t, v)?;
            project(t, o, &r)
        };
        check_op(name, seed, inputs, &wrapped).map(|rep| reports.push(rep))
    };
    let a = uniform(&mut rng, 3, 4, -1.0, 1.0);
    let b = uniform(&mut rng, 4, 2, -1.0, 1.0);
    run("matmul", vec![a.clone(), b], (3, 2), Box::new(|t, v| t.matmul(v[0], v[1])), &mut rng)?;
    run("transpose", vec![a.clone()], (4, 3), Box::new(|t, v| t.transpose(v[0])), &mut rng)?;
    let c = uniform(&mut rng, 3, 4, -1.0, 1.0);
    run("add", vec![a.clone(), c.clone()], (3, 4), Box::new(|t, v| t.add(v[0], v[1])), &mut rng)?;
    run("sub", vec![a.clone(), c.clone()], (3, 4), Box::new(|t, v| t.sub(v[0], v[1])), &mut rng)?;
    run("hadamard", vec![a.clone(), c.clone()], (3, 4), Box::new(|t, v| t.hadamard(v[0], v[1])), &mut rng)?;
    run("scale", vec![a.clone()], (3, 4), Box::new(|t, v| t.scale(v[0], -1.7)), &mut rng)?;
    let bias = uniform(&mut rng, 1, 4, -1.0, 1.0);
    run("add_bias", vec![a.clone(), bias], (3, 4), Box::new(|t, v| t.add_bias(v[0], v[1])), &mut rng)?;
    let d = uniform(&mut rng, 3, 2, -1.0, 1.0);
    run("concat_cols", vec![a.clone(), d], (3, 6), Box::new(|t, v| t.concat_cols(v[0], v[1])), &mut rng)?;
    run("slice_cols", vec![a.clone()], (3, 2), Box::new(|t, v| t.slice_cols(v[0], 1, 2)), &mut rng)?;
    let k = away_from_zero(&mut rng, 3, 4);
    run("relu", vec![k], (3, 4), Box::new(|t, v| t.relu(v[0])), &mut rng)?;
    let s = uniform(&mut rng, 3, 4, -3.0, 3.0);
    run("tanh", vec![s.clone()], (3, 4), Box::new(|t, v| t.tanh(v[0])), &mut rng)?;
    run("sigmoid", vec![s.clone()], (3, 4), Box::new(|t, v| t.sigmoid(v[0])), &mut rng)?;
    run("row_softmax", vec![s.clone()], (3, 4), Box::new(|t, v| t.row_softmax(v[0])), &mut rng)?;
    let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1]);
    let gi = idx.clone();
    run("gather_rows", vec![a.clone()], (4, 4), Box::new(move |t, v| t.gather_rows(v[0], gi.clone())), &mut rng)?;
    let x4 = uniform(&mut rng, 4, 3, -1.0, 1.0);
    let si = idx.clone();
    run("scatter_add_rows", vec![x4.clone()], (5, 3), Box::new(move |t, v| t.scatter_add_rows(v[0], si.clone(), 5)), &mut rng)?;
    let w: Arc<[f64]> = Arc::from(vec![0.5, -2.0, 1.5, 0.25]);
    run("scale_rows", vec![x4.clone()], (4, 3), Box::new(move |t, v| t.scale_rows(v[0], w.clone())), &mut rng)?;
    let index = Arc::new(EdgeIndex {
        n: 3,
        recv: Arc::from(vec![0, 0, 1, 2, 2]),
        send: Arc::from(vec![1, 3, 0, 0, 2]),
        coeff: Arc::from(vec![0.5, 0.7, 1.0, -0.3, 2.0]),
    });
    run("edge_aggregate", vec![x4.clone()], (3, 3), Box::new(move |t, v| t.edge_aggregate(v[0], index.clone())), &mut rng)?;
    let mi = idx.clone();
    run("mean_rows", vec![x4.clone()], (1, 3), Box::new(move |t, v| t.mean_rows(v[0], mi.clone())), &mut rng)?;
    run("sum", vec![a.clone()], (1, 1), Box::new(|t, v| t.sum(v[0])), &mut rng)?;
    run("sum_squares", vec![a.clone()], (1, 1), Box::new(|t, v| t.sum_squares(v[0])), &mut rng)?;
    let p = uniform(&mut rng, 4, 2, 0.1, 1.0);
    let picks: Arc<[(usize, usize)]> = Arc::from(vec![(0, 1), (1, 0), (3, 1), (3, 0)]);
    run("neg_log_pick", vec![p], (1, 1), Box::new(move |t, v| t.neg_log_pick(v[0], picks.clone())), &mut rng)?;
    Ok(reports)
}

/// Five nodes: three seen, two unseen, both classes in each subset.
pub fn five_node_instance(seed: u64) -> (Dataset, CrossModalGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = [Label::Real, Label::Fake, Label::Real, Label::Real, Label::Fake];
    let splits = [Split::Seen, Split::Seen, Split::Seen, Split::Unseen, Split::Unseen];
    let records = (0..5)
        .map(|i| TweetRecord {
            id: format!("n{i}"),
            image_emb: (0..3).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            text_emb: (0..3).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            label: labels[i],
            event_id: Some((i / 3) as u32),
            split: splits[i],
        })
        .collect();
    let ds = Dataset::new(records, 3, 3).expect("valid instance");
    let g = CrossModalGraph::from_pairs(5, &[(0, 1), (1, 2), (0, 3), (2, 4), (3, 4), (1, 4)])
        .expect("valid graph");
    (ds, g)
}

/// Gradient of the total training loss with respect to every model parameter.
pub fn check_full_loss(seed: u64, variant: Variant) -> Result<GradReport, TrainError> {
    let (ds, g) = five_node_instance(seed);
    let cfg = TrainConfig {
        variant,
        hidden: 4,
        gcn_layers: 2,
        la_layers: 3,
        lambda: 0.7,
        mu: 1.3,
        transductive_train: true,
        ..TrainConfig::default()
    };
    let problem = TrainingProblem::new(&ds, &g, &cfg)?;
    let mut model = TrainedModel::init(&cfg, 6, seed);
    // zero biases plus a ReLU-dead row put a pre-activation exactly on the
    // kink, where finite differences are one-sided; jitter everything off it
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 << 32));
    for p in model.params_mut() {
        for x in p.data_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
    let mut tape = Tape::new();
    let f = problem.forward(&model, &mut tape)?;
    tape.backward(f.total)?;
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let analytic: Vec<Tensor> = f
        .params
        .iter()
        .zip(&params)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    let numeric = numeric_grad(&params, |ts| {
        let mut m = model.clone();
        for (slot, t) in m.params_mut().into_iter().zip(ts) {
            slot.clone_from(t);
        }
        let mut tape = Tape::new();
        Ok::<f64, TrainError>(problem.forward(&m, &mut tape)?.values.l_all)
    })?;
    Ok(GradReport {
        name: format!("total_loss[{variant}]"),
        seed,
        entries: params.iter().map(Tensor::len).sum(),
        max_rel_error: max_rel_error(&analytic, &numeric),
    })
}

/// Every op plus the total loss for each model variant, for each seed.
pub fn full_suite(seeds: &[u64]) -> Result<Vec<GradReport>, TrainError> {
    let mut out = Vec::new();
    for &s in seeds {
        out.extend(op_suite(s)?);
        for v in Variant::ALL {
            out.push(check_full_loss(s, v)?);
        }
    }
    Ok(out)
}

/// Largest error per check name across seeds, in first-seen order.
pub fn worst_by_name(reports: &[GradReport]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for r in reports {
        match out.iter_mut().find(|(n, _)| *n == r.name) {
            Some((_, e)) => *e = e.max(r.max_rel_error),
            None => out.push((r.name.clone(), r.max_rel_error)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn numeric_grad_of_quadratic() {
        let p = vec![Tensor::from_rows(&[&[1.0, -2.0]])];
        let g = numeric_grad(&p, |ts| Ok::<f64, ()>(ts[0].data().iter().map(|x| x * x).sum()))
            .unwrap();
        assert!((g[0].data()[0] - 2.0).abs() < 1e-8);
        assert!((g[0].data()[1] + 4.0).abs() < 1e-8);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a deliberately wrong analytic gradient must be caught
        let a = [Tensor::from_rows(&[&[3.0]])];
        let n = numeric_grad(&a, |ts| Ok::<f64, ()>(ts[0].data()[0].powi(2))).unwrap();
        let wrong = [Tensor::from_rows(&[&[5.0]])];
        assert!(max_rel_error(&wrong, &n) > TOLERANCE);
    }

    #[test]
    fn ops_pass_one_seed() {
        for r in op_suite(11).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn full_loss_passes_one_seed() {
        let r = check_full_loss(3, Variant::Full).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
