//! Full-batch training of the feature and label networks.

mod adamw;
mod config;
mod synth;

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adamw::{adamw_step, AdamState};
pub use config::{AdamWConfig, ConfigError, TrainConfig, Variant};
pub use synth::{event_split, gen_synth, SynthConfig, SynthError};

use crate::datamodel::{node_features, Dataset, Label, Split};
use crate::fcn::{FcnModel, LabelState, Parameterized};
use crate::graph::{CrossModalGraph, DirectedEdges};
use crate::losses::{total_on_tape, LossError, LossValues, MmdGroups, Reduction, Supervision};
use crate::lpn::LpnModel;
use crate::ndops::{Tape, Tensor, TensorError, Var};

#[derive(Error, Debug)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("degenerate class: {0}")]
    DegenerateClass(String),
    #[error("no supervised nodes")]
    NoSupervision,
    #[error("graph has {graph} nodes but the dataset has {dataset}")]
    GraphSize { graph: usize, dataset: usize },
    #[error("non-finite loss at epoch {epoch}: {values:?}")]
    NonFiniteLoss { epoch: usize, values: LossValues },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Parameters of one trained (or freshly initialised) model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub fcn: FcnModel,
    pub lpn: Option<LpnModel>,
}

impl TrainedModel {
    /// Seeded initialisation; the FCN draws from the stream before the LPN.
    pub fn init(cfg: &TrainConfig, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = if cfg.variant.uses_gcn() {
            cfg.gcn_layers
        } else {
            0
        };
        let fcn = FcnModel::new(input_dim, cfg.hidden, layers, cfg.shared_self_weight, &mut rng);
        let lpn = cfg
            .variant
            .attention()
            .map(|kind| LpnModel::new(fcn.output_dim(), cfg.la_layers, kind, &mut rng));
        TrainedModel {
            config: cfg.clone(),
            fcn,
            lpn,
        }
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Final class probabilities for every node of `g`: `ŷ^{L'}` when a label
    /// network is present, otherwise `ỹ`.
    pub fn predict(&self, x: &Tensor, g: &CrossModalGraph) -> Result<LabelState, TensorError> {
        if x.rows() != g.n() {
            return Err(TensorError::ShapeMismatch {
                op: "predict",
                lhs: x.shape(),
                rhs: (g.n(), x.cols()),
            });
        }
        let edges = g.directed_edges();
        let mut tape = Tape::new();
        let out = self.forward_probs(&mut tape, x, &edges)?;
        Ok(LabelState::new(tape.value(out).clone())?)
    }

    pub fn predict_dataset(&self, ds: &Dataset, g: &CrossModalGraph) -> Result<LabelState, TensorError> {
        self.predict(&node_features(ds), g)
    }

    fn forward_probs(&self, tape: &mut Tape, x: &Tensor, edges: &DirectedEdges) -> Result<Var, TensorError> {
        let fv = self.fcn.bind(tape);
        let xv = tape.constant(x.clone());
        let xl = fv.contextualize(tape, xv, edges)?;
        let y1 = fv.predict_initial(tape, xl)?;
        match &self.lpn {
            Some(lpn) => {
                let lv = lpn.bind(tape);
                let alpha = lv.attention(tape, xl, edges)?;
                lv.propagate(tape, y1, alpha, edges)
            }
            None => Ok(y1),
        }
    }
}

impl Parameterized for TrainedModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.fcn.named_params();
        if let Some(l) = &self.lpn {
            out.extend(l.named_params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.fcn.params_mut();
        if let Some(l) = &mut self.lpn {
            out.extend(l.params_mut());
        }
        out
    }
}

/// Everything an epoch needs that does not change between epochs.
#[derive(Clone, Debug)]
pub struct TrainingProblem {
    x: Tensor,
    edges: DirectedEdges,
    supervision: Supervision,
    mmd: Option<MmdGroups>,
    lambda: f64,
    mu: f64,
    reduction: Reduction,
}

/// Result of one forward pass: loss handle, parameter handles in
/// [`Parameterized::params_mut`] order, and the loss values.
pub struct Forward {
    pub total: Var,
    pub params: Vec<Var>,
    pub values: LossValues,
}

impl TrainingProblem {
    /// Picks the training nodes, graph and loss index sets for `cfg`.
    pub fn new(ds: &Dataset, g: &CrossModalGraph, cfg: &TrainConfig) -> Result<Self, TrainError> {
        if g.n() != ds.len() {
            return Err(TrainError::GraphSize {
                graph: g.n(),
                dataset: ds.len(),
            });
        }
        let features = node_features(ds);
        let (labels, splits) = (ds.labels(), ds.splits());
        let (x, graph, labels, splits) = if cfg.transductive_train {
            (features, g.clone(), labels, splits)
        } else {
            let nodes: Vec<usize> = (0..ds.len()).filter(|&i| splits[i] != Split::Test).collect();
            (
                features.select_rows(&nodes),
                g.induced(&nodes),
                nodes.iter().map(|&i| labels[i]).collect(),
                nodes.iter().map(|&i| splits[i]).collect::<Vec<_>>(),
            )
        };
        let merge = cfg.merges_unseen();
        let supervised: Vec<usize> = (0..splits.len())
            .filter(|&i| splits[i] == Split::Seen || (merge && splits[i] == Split::Unseen))
            .collect();
        if supervised.is_empty() {
            return Err(TrainError::NoSupervision);
        }
        let supervision = Supervision::new(&labels, &splits, &supervised)?;
        let mmd = if cfg.variant.uses_mmd() {
            let groups = MmdGroups::new(&labels, &splits);
            if cfg.mu > 0.0 && !groups.is_complete() {
                return Err(TrainError::DegenerateClass(
                    "seen and unseen subsets must each contain both classes".into(),
                ));
            }
            Some(groups)
        } else {
            None
        };
        Ok(TrainingProblem {
            x,
            edges: graph.directed_edges(),
            supervision,
            mmd,
            lambda: cfg.lambda,
            mu: cfg.mu,
            reduction: cfg.reduction(),
        })
    }

    pub fn supervision(&self) -> &Supervision {
        &self.supervision
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn forward(&self, model: &TrainedModel, tape: &mut Tape) -> Result<Forward, TensorError> {
        let fv = model.fcn.bind(tape);
        let lv = model.lpn.as_ref().map(|l| l.bind(tape));
        let mut params = fv.params().to_vec();
        if let Some(lv) = &lv {
            params.extend(lv.params());
        }
        let x = tape.constant(self.x.clone());
        let xl = fv.contextualize(tape, x, &self.edges)?;
        let y1 = fv.predict_initial(tape, xl)?;
        let l_fcn = self.supervision.cross_entropy(tape, y1, self.reduction)?;
        let l_lpn = match &lv {
            Some(lv) => {
                let alpha = lv.attention(tape, xl, &self.edges)?;
                let y = lv.propagate(tape, y1, alpha, &self.edges)?;
                self.supervision.cross_entropy(tape, y, self.reduction)?
            }
            None => tape.constant(Tensor::scalar(0.0)),
        };
        let l_mmd = match &self.mmd {
            Some(groups) => groups.loss(tape, xl)?,
            None => tape.constant(Tensor::scalar(0.0)),
        };
        let total = total_on_tape(tape, l_fcn, l_lpn, l_mmd, self.lambda, self.mu)?;
        let item = |v: Var| tape.value(v).item().expect("scalar loss");
        let values = LossValues {
            l_fcn: item(l_fcn),
            l_lpn: item(l_lpn),
            l_mmd: item(l_mmd),
            l_all: item(total),
        };
        Ok(Forward {
            total,
            params,
            values,
        })
    }

    /// Unseen labels read by the cross-entropy terms of one forward pass.
    fn unseen_reads_per_pass(&self, model: &TrainedModel) -> usize {
        let terms = if model.lpn.is_some() { 2 } else { 1 };
        terms * self.supervision.unseen_reads()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: TrainedModel,
    /// One entry per epoch, measured before that epoch's update.
    pub history: Vec<LossValues>,
    /// Unseen-split labels read inside cross-entropy terms over the whole run.
    pub unseen_ce_reads: usize,
}

/// Trains with `cfg.seed`.
pub fn train(ds: &Dataset, g: &CrossModalGraph, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    train_seeded(ds, g, cfg, cfg.seed)
}

pub fn train_seeded(
    ds: &Dataset,
    g: &CrossModalGraph,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let problem = TrainingProblem::new(ds, g, cfg)?;
    let mut model = TrainedModel::init(cfg, ds.d_img + ds.d_txt, seed);
    let mut state = AdamState::new(model.named_params().into_iter().map(|(_, t)| t));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut unseen_ce_reads = 0;
    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let f = problem.forward(&model, &mut tape)?;
        unseen_ce_reads += problem.unseen_reads_per_pass(&model);
        if !f.values.l_all.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                values: f.values,
            });
        }
        tape.backward(f.total)?;
        let grads: Vec<Option<&Tensor>> = f.params.iter().map(|&v| tape.grad(v)).collect();
        adamw_step(&mut model.params_mut(), &grads, &mut state, &cfg.adamw, cfg.lr)?;
        history.push(f.values);
        log::debug!("epoch {epoch}: {:?}", f.values);
    }
    Ok(TrainOutput {
        model,
        history,
        unseen_ce_reads,
    })
}

/// Hard labels from a prediction; the caller chooses which nodes to score.
pub fn hard_labels(pred: &LabelState) -> Vec<Label> {
    pred.argmax()
}

pub fn write_loss_csv<W: Write>(history: &[LossValues], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,l_fcn,l_lpn,l_mmd,l_all")?;
    for (k, l) in history.iter().enumerate() {
        writeln!(w, "{},{},{},{},{}", k + 1, l.l_fcn, l.l_lpn, l.l_mmd, l.l_all)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, SimilarityConfig};

    fn small() -> (Dataset, CrossModalGraph) {
        let ds = gen_synth(&SynthConfig {
            events: 6,
            per_event: 10,
            dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let g = build_graph(&ds, &SimilarityConfig::new(0.9)).unwrap();
        (ds, g)
    }

    fn quick(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            hidden: 8,
            gcn_layers: 2,
            epochs: 5,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected_one_epoch_one_step() {
        let (ds, g) = small();
        let mut cfg = quick(Variant::Full);
        cfg.epochs = 0;
        assert!(matches!(train(&ds, &g, &cfg), Err(TrainError::Config(_))));
        cfg.epochs = 1;
        let out = train(&ds, &g, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        let init = TrainedModel::init(&cfg, 16, cfg.seed);
        assert_ne!(out.model, init);
    }

    #[test]
    fn deterministic() {
        let (ds, g) = small();
        let cfg = quick(Variant::Full);
        let a = train(&ds, &g, &cfg).unwrap();
        let b = train(&ds, &g, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn loss_accounting() {
        let (ds, g) = small();
        let mut cfg = quick(Variant::Full);
        cfg.lambda = 0.3;
        cfg.mu = 2.5;
        for l in train(&ds, &g, &cfg).unwrap().history {
            let want = l.l_fcn + cfg.lambda * l.l_lpn + cfg.mu * l.l_mmd;
            assert!((l.l_all - want).abs() <= 1e-9);
            assert!(l.l_mmd > 0.0);
        }
    }

    #[test]
    fn nesting_with_zero_weights() {
        let (ds, g) = small();
        let mut full = quick(Variant::Full);
        full.lambda = 0.0;
        full.mu = 0.0;
        let mut fcn = quick(Variant::FcnOnly);
        fcn.merge_unseen = Some(false);
        let a = train(&ds, &g, &full).unwrap();
        let b = train(&ds, &g, &fcn).unwrap();
        assert_eq!(a.model.fcn, b.model.fcn);
        let la: Vec<f64> = a.history.iter().map(|l| l.l_all).collect();
        let lb: Vec<f64> = b.history.iter().map(|l| l.l_all).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn protocol_counter() {
        let (ds, g) = small();
        let full = train(&ds, &g, &quick(Variant::Full)).unwrap();
        assert_eq!(full.unseen_ce_reads, 0);
        let merged = train(&ds, &g, &quick(Variant::FcnLpnNoMmd)).unwrap();
        // one unseen event of 10 nodes, two ce terms, five epochs
        assert_eq!(merged.unseen_ce_reads, 10 * 2 * 5);
    }

    #[test]
    fn degenerate_class_rejected() {
        let (mut ds, g) = small();
        for r in ds.records.iter_mut().filter(|r| r.split == Split::Unseen) {
            r.label = Label::Real;
        }
        let err = train(&ds, &g, &quick(Variant::Full)).unwrap_err();
        assert!(matches!(err, TrainError::DegenerateClass(_)));
        // without the domain term the same data trains
        assert!(train(&ds, &g, &quick(Variant::FcnLpnNoMmd)).is_ok());
    }

    #[test]
    fn every_variant_predicts_simplex_rows() {
        let (ds, g) = small();
        for v in Variant::ALL {
            let out = train(&ds, &g, &quick(v)).unwrap();
            let p = out.model.predict_dataset(&ds, &g).unwrap();
            assert_eq!(p.len(), ds.len());
            assert!(p.max_simplex_violation() < 1e-9);
            assert_eq!(out.model.lpn.is_some(), v.attention().is_some());
        }
    }

    #[test]
    fn transductive_training_graph() {
        let (ds, g) = small();
        let mut cfg = quick(Variant::Full);
        let induced = TrainingProblem::new(&ds, &g, &cfg).unwrap();
        cfg.transductive_train = true;
        let all = TrainingProblem::new(&ds, &g, &cfg).unwrap();
        assert_eq!(induced.num_nodes(), 40);
        assert_eq!(all.num_nodes(), 60);
        assert_eq!(induced.supervision().len(), all.supervision().len());
    }

    #[test]
    fn full_variant_descends() {
        let (ds, g) = small();
        let cfg = TrainConfig {
            hidden: 16,
            epochs: 200,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let h = train(&ds, &g, &cfg).unwrap().history;
        assert!(h.last().unwrap().l_all < h[0].l_all);
    }

    #[test]
    fn loss_csv_layout() {
        let h = [LossValues::combine(1.0, 2.0, 0.5, 1.0, 1.0)];
        let mut buf = Vec::new();
        write_loss_csv(&h, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,l_fcn,l_lpn,l_mmd,l_all\n1,1,2,0.5,3.5\n"
        );
    }
}
