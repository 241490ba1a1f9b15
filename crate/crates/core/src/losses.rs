//! Cross-entropy over supervised nodes, class-conditional linear-kernel MMD
//! between seen and unseen features, and their weighted sum.

use std::sync::Arc;

use thiserror::Error;

use crate::datamodel::{Label, Split};
use crate::fcn::LabelState;
use crate::ndops::{Tape, Tensor, TensorError, Var, PROB_EPS};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LossError {
    #[error("node {0} is supervised but has no label")]
    MissingLabel(usize),
    #[error("mmd needs two non-empty sets")]
    EmptySet,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub l_fcn: f64,
    pub l_lpn: f64,
    pub l_mmd: f64,
    pub l_all: f64,
}

impl LossValues {
    /// Combines the parts with `l_all = l_fcn + λ l_lpn + μ l_mmd`.
    pub fn combine(l_fcn: f64, l_lpn: f64, l_mmd: f64, lambda: f64, mu: f64) -> Self {
        LossValues {
            l_fcn,
            l_lpn,
            l_mmd,
            l_all: total_loss(l_fcn, l_lpn, l_mmd, lambda, mu),
        }
    }
}

/// Labelled cells read by a cross-entropy term, plus how many of them come
/// from the unseen split.
#[derive(Clone, Debug)]
pub struct Supervision {
    picks: Arc<[(usize, usize)]>,
    unseen_reads: usize,
}

impl Supervision {
    pub fn new(labels: &[Label], splits: &[Split], nodes: &[usize]) -> Result<Self, LossError> {
        let mut picks = Vec::with_capacity(nodes.len());
        let mut unseen_reads = 0;
        for &i in nodes {
            let c = labels[i].class_index().ok_or(LossError::MissingLabel(i))?;
            if splits[i] == Split::Unseen {
                unseen_reads += 1;
            }
            picks.push((i, c));
        }
        Ok(Supervision {
            picks: picks.into(),
            unseen_reads,
        })
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    /// Number of unseen-split labels read each time this term is evaluated.
    pub fn unseen_reads(&self) -> usize {
        self.unseen_reads
    }

    pub fn cross_entropy(
        &self,
        tape: &mut Tape,
        probs: Var,
        reduction: Reduction,
    ) -> Result<Var, TensorError> {
        let s = tape.neg_log_pick(probs, self.picks.clone())?;
        match reduction {
            Reduction::Sum => Ok(s),
            Reduction::Mean => tape.scale(s, 1.0 / self.picks.len().max(1) as f64),
        }
    }
}

/// Node index sets for the class-conditional MMD term.
#[derive(Clone, Debug)]
pub struct MmdGroups {
    /// `(seen, unseen)` per class, `None` when either side is empty.
    pairs: [Option<(Arc<[usize]>, Arc<[usize]>)>; 2],
}

impl MmdGroups {
    pub fn new(labels: &[Label], splits: &[Split]) -> Self {
        let collect = |split: Split, label: Label| -> Vec<usize> {
            (0..labels.len())
                .filter(|&i| splits[i] == split && labels[i] == label)
                .collect()
        };
        let pairs = [Label::Real, Label::Fake].map(|label| {
            let s = collect(Split::Seen, label);
            let u = collect(Split::Unseen, label);
            if s.is_empty() || u.is_empty() {
                log::warn!(
                    "class {label:?} has {} seen and {} unseen nodes; its mmd term is 0",
                    s.len(),
                    u.len()
                );
                None
            } else {
                Some((s.into(), u.into()))
            }
        });
        MmdGroups { pairs }
    }

    /// Whether both classes contribute a term.
    pub fn is_complete(&self) -> bool {
        self.pairs.iter().all(Option::is_some)
    }

    pub fn loss(&self, tape: &mut Tape, xl: Var) -> Result<Var, TensorError> {
        let mut total: Option<Var> = None;
        for (s, u) in self.pairs.iter().flatten() {
            let term = mmd_on_tape(tape, xl, s.clone(), u.clone())?;
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => {
                // no class contributes; keep the graph connected with a zero
                let z = tape.scale(xl, 0.0)?;
                tape.sum(z)
            }
        }
    }
}

/// `‖mean(x[p]) − mean(x[q])‖²` on the tape.
pub fn mmd_on_tape(
    tape: &mut Tape,
    x: Var,
    p: Arc<[usize]>,
    q: Arc<[usize]>,
) -> Result<Var, TensorError> {
    let mp = tape.mean_rows(x, p)?;
    let mq = tape.mean_rows(x, q)?;
    let d = tape.sub(mp, mq)?;
    tape.sum_squares(d)
}

/// `l_fcn + λ l_lpn + μ l_mmd` on the tape, evaluated left to right.
pub fn total_on_tape(
    tape: &mut Tape,
    l_fcn: Var,
    l_lpn: Var,
    l_mmd: Var,
    lambda: f64,
    mu: f64,
) -> Result<Var, TensorError> {
    let a = tape.scale(l_lpn, lambda)?;
    let b = tape.scale(l_mmd, mu)?;
    let s = tape.add(l_fcn, a)?;
    tape.add(s, b)
}

pub fn cross_entropy(
    labels: &[Label],
    probs: &LabelState,
    nodes: &[usize],
    reduction: Reduction,
) -> Result<f64, LossError> {
    let mut s = 0.0;
    for &i in nodes {
        let c = labels[i].class_index().ok_or(LossError::MissingLabel(i))?;
        s -= probs.probs().get(i, c).max(PROB_EPS).ln();
    }
    Ok(match reduction {
        Reduction::Sum => s,
        Reduction::Mean => s / nodes.len().max(1) as f64,
    })
}

/// Cross-entropy of the initial predictions `ỹ` over the supervised nodes.
pub fn ce_fcn(
    labels: &[Label],
    y_pred: &LabelState,
    seen: &[usize],
    reduction: Reduction,
) -> Result<f64, LossError> {
    cross_entropy(labels, y_pred, seen, reduction)
}

/// Cross-entropy of the propagated labels `ŷ^{L'}` over the supervised nodes.
pub fn ce_lpn(
    labels: &[Label],
    y_hat: &LabelState,
    seen: &[usize],
    reduction: Reduction,
) -> Result<f64, LossError> {
    cross_entropy(labels, y_hat, seen, reduction)
}

/// Squared distance between the means of two sets of rows.
pub fn mmd(p: &Tensor, q: &Tensor) -> Result<f64, LossError> {
    if p.rows() == 0 || q.rows() == 0 {
        return Err(LossError::EmptySet);
    }
    if p.cols() != q.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "mmd",
            lhs: p.shape(),
            rhs: q.shape(),
        }
        .into());
    }
    let mean = |t: &Tensor| -> Vec<f64> {
        let mut m = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (a, x) in m.iter_mut().zip(t.row(r)) {
                *a += x;
            }
        }
        m.iter().map(|v| v / t.rows() as f64).collect()
    };
    let (mp, mq) = (mean(p), mean(q));
    Ok(mp.iter().zip(&mq).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Sum over classes of `mmd(seen_c, unseen_c)`; a class missing from either
/// subset contributes 0.
pub fn mmd_loss(xl: &Tensor, labels: &[Label], splits: &[Split]) -> Result<f64, LossError> {
    let groups = MmdGroups::new(labels, splits);
    let mut total = 0.0;
    for (s, u) in groups.pairs.iter().flatten() {
        total += mmd(&xl.select_rows(s), &xl.select_rows(u))?;
    }
    Ok(total)
}

pub fn total_loss(l_fcn: f64, l_lpn: f64, l_mmd: f64, lambda: f64, mu: f64) -> f64 {
    l_fcn + lambda * l_lpn + mu * l_mmd
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn ce_near_perfect_is_zero() {
        let p = LabelState::new(Tensor::from_rows(&[&[1.0 - 1e-12, 1e-12]])).unwrap();
        let l = ce_fcn(&[Label::Real], &p, &[0], Reduction::Sum).unwrap();
        assert!(l.abs() < 1e-11);
    }

    #[test]
    fn ce_uniform_four_nodes() {
        let p = LabelState::new(Tensor::filled(4, 2, 0.5)).unwrap();
        let labels = [Label::Real, Label::Fake, Label::Fake, Label::Real];
        let l = ce_lpn(&labels, &p, &[0, 1, 2, 3], Reduction::Sum).unwrap();
        assert!((l - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 2.7726).abs() < 1e-4);
        let m = ce_lpn(&labels, &p, &[0, 1, 2, 3], Reduction::Mean).unwrap();
        assert!((m - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_matches_scalar_loop_and_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LabelState::from_logits(&random_tensor(7, 2, &mut rng)).unwrap();
        let labels: Vec<Label> = (0..7)
            .map(|i| if i % 3 == 0 { Label::Fake } else { Label::Real })
            .collect();
        let nodes = [0, 2, 3, 6];
        let mut want = 0.0;
        for &i in &nodes {
            let k = if labels[i] == Label::Fake { 1 } else { 0 };
            want += -p.probs().get(i, k).ln();
        }
        let got = ce_fcn(&labels, &p, &nodes, Reduction::Sum).unwrap();
        assert!((got - want).abs() < 1e-12);

        let splits = vec![Split::Seen; 7];
        let sup = Supervision::new(&labels, &splits, &nodes).unwrap();
        let mut tape = Tape::new();
        let pv = tape.constant(p.probs().clone());
        let l = sup.cross_entropy(&mut tape, pv, Reduction::Sum).unwrap();
        assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_unlabeled() {
        let p = LabelState::new(Tensor::filled(2, 2, 0.5)).unwrap();
        assert_eq!(
            ce_fcn(&[Label::Real, Label::Unlabeled], &p, &[0, 1], Reduction::Sum),
            Err(LossError::MissingLabel(1))
        );
    }

    #[test]
    fn ce_decreases_in_true_class_probability() {
        let mut prev = f64::INFINITY;
        for k in 1..20 {
            let q = k as f64 / 20.0;
            let p = LabelState::new(Tensor::from_rows(&[&[1.0 - q, q]])).unwrap();
            let l = ce_fcn(&[Label::Fake], &p, &[0], Reduction::Sum).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn mmd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_tensor(5, 3, &mut rng);
        assert_eq!(mmd(&p, &p).unwrap(), 0.0);

        let a = Tensor::from_rows(&[&[1.0, 2.0]]);
        let b = Tensor::from_rows(&[&[4.0, -2.0]]);
        assert_eq!(mmd(&a, &b).unwrap(), 25.0);

        let p = Tensor::from_rows(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let q = Tensor::from_rows(&[&[1.0, 1.0]]);
        assert_eq!(mmd(&p, &q).unwrap(), 1.0);

        assert_eq!(mmd(&Tensor::zeros(0, 2), &q), Err(LossError::EmptySet));
    }

    fn protocol() -> (Vec<Label>, Vec<Split>) {
        use Label::*;
        use Split::*;
        (
            vec![Real, Fake, Real, Fake, Real, Fake, Real],
            vec![Seen, Seen, Seen, Unseen, Unseen, Unseen, Test],
        )
    }

    #[test]
    fn mmd_loss_copy_is_zero() {
        let (labels, splits) = protocol();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = random_tensor(7, 3, &mut rng);
        // unseen rows 3,4,5 equal to means of their seen classes
        let real_mean: Vec<f64> = (0..3).map(|c| (x.get(0, c) + x.get(2, c)) / 2.0).collect();
        let fake = x.row(1).to_vec();
        x.row_mut(4).copy_from_slice(&real_mean);
        x.row_mut(3).copy_from_slice(&fake);
        x.row_mut(5).copy_from_slice(&fake);
        assert!(mmd_loss(&x, &labels, &splits).unwrap() < 1e-30);
    }

    #[test]
    fn mmd_loss_shifted_real_mean() {
        let (labels, splits) = protocol();
        let mut x = Tensor::zeros(7, 4);
        x.set(4, 0, 1.0);
        assert_eq!(mmd_loss(&x, &labels, &splits).unwrap(), 1.0);
    }

    #[test]
    fn mmd_loss_matches_oracle_and_tape() {
        let (labels, splits) = protocol();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(7, 5, &mut rng);
        // mean-then-distance, one class at a time
        let mut want = 0.0;
        for class in [Label::Real, Label::Fake] {
            let mean_of = |split: Split| -> Vec<f64> {
                let rows: Vec<usize> = (0..7)
                    .filter(|&i| labels[i] == class && splits[i] == split)
                    .collect();
                (0..5)
                    .map(|c| rows.iter().map(|&r| x.get(r, c)).sum::<f64>() / rows.len() as f64)
                    .collect()
            };
            let (s, u) = (mean_of(Split::Seen), mean_of(Split::Unseen));
            want += s.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let got = mmd_loss(&x, &labels, &splits).unwrap();
        assert!((got - want).abs() < 1e-12);

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let l = MmdGroups::new(&labels, &splits).loss(&mut tape, xv).unwrap();
        assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_class_contributes_zero() {
        use Label::*;
        use Split::*;
        let labels = vec![Real, Fake, Real, Real];
        let splits = vec![Seen, Seen, Unseen, Unseen];
        let mut x = Tensor::zeros(4, 2);
        x.set(1, 0, 100.0); // the only fake node; no unseen fake to compare with
        x.set(2, 1, 3.0);
        let groups = MmdGroups::new(&labels, &splits);
        assert!(!groups.is_complete());
        // real: seen mean [0,0], unseen mean [0,1.5]
        assert_eq!(mmd_loss(&x, &labels, &splits).unwrap(), 2.25);

        let mut tape = Tape::new();
        let xv = tape.param(Tensor::zeros(2, 2));
        let l = MmdGroups::new(&[Real, Real], &[Seen, Seen]).loss(&mut tape, xv).unwrap();
        assert_eq!(tape.value(l).item(), Some(0.0));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.5, 2.0, 3.0, 0.0, 0.0), 1.5);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 1.0, 1.0), 6.0);
        assert!((total_loss(1.0, 1.0, 1.0, 0.01, 100.0) - 101.01).abs() < 1e-12);
        let lv = LossValues::combine(1.0, 2.0, 3.0, 1.0, 1.0);
        assert_eq!(lv.l_all, 6.0);
    }

    #[test]
    fn supervision_counts_unseen() {
        let (labels, splits) = protocol();
        let sup = Supervision::new(&labels, &splits, &[0, 1, 3, 4]).unwrap();
        assert_eq!(sup.unseen_reads(), 2);
        let sup = Supervision::new(&labels, &splits, &[0, 1, 2]).unwrap();
        assert_eq!(sup.unseen_reads(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mmd_symmetric_and_non_negative(seed in any::<u64>(), np in 1usize..6, nq in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_tensor(np, 3, &mut rng);
                let q = random_tensor(nq, 3, &mut rng);
                let pq = mmd(&p, &q).unwrap();
                prop_assert!(pq >= 0.0);
                prop_assert_eq!(pq, mmd(&q, &p).unwrap());
                prop_assert_eq!(mmd(&p, &p).unwrap(), 0.0);
            }
        }
    }
}
