//! Dense 2-D tensors and a reverse-mode autodiff tape covering exactly the
//! operations the networks use.
//!
//! Values are f64 throughout. Every forward op checks shapes and records a
//! node; [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients (`+=`) so values used in several places get the sum of their
//! contributions.

mod tape;
mod tensor;

use thiserror::Error;

pub use tape::{row_softmax_value, sigmoid, EdgeIndex, Tape, Var, PROB_EPS};
pub use tensor::Tensor;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: empty row selection")]
    EmptySelection(&'static str),
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("variable does not belong to this tape")]
    DetachedNode,
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let m = t.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let p = t.matmul(i, m).unwrap();
        assert_eq!(t.value(p), t.value(m));

        let a = t.param(Tensor::from_rows(&[&[1.0, 2.0]]));
        let b = t.constant(Tensor::from_rows(&[&[3.0], &[4.0]]));
        let ab = t.matmul(a, b).unwrap();
        assert_eq!(t.value(ab).item(), Some(11.0));
        let loss = t.sum(ab).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            t.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let b = t.constant(Tensor::from_rows(&[&[3.0, 4.0]]));
        let h = t.hadamard(a, b).unwrap();
        assert_eq!(t.value(h).data(), &[3.0, 8.0]);

        let x = t.constant(Tensor::from_rows(&[&[1.0]]));
        let y = t.constant(Tensor::from_rows(&[&[2.0, 3.0]]));
        let c = t.concat_cols(x, y).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);

        let r = t.constant(Tensor::from_rows(&[&[-1.0, 2.0]]));
        let rr = t.relu(r).unwrap();
        assert_eq!(t.value(rr).data(), &[0.0, 2.0]);

        let z = t.constant(Tensor::from_rows(&[&[0.0, 0.0]]));
        let s = t.row_softmax(z).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);

        let sat = t.constant(Tensor::from_rows(&[&[0.0, 50.0, -50.0]]));
        let th = t.tanh(sat).unwrap();
        let v = t.value(th).data();
        assert_eq!(v[0], 0.0);
        assert!(v[1].abs() <= 1.0 && v[2].abs() <= 1.0 && v[1].is_finite());
    }

    #[test]
    fn add_backward_passes_gradient_through() {
        let mut t = Tape::new();
        let a = t.param(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 4.0]]));
        let b = t.param(Tensor::from_rows(&[&[7.0, 1.0], &[3.0, 3.0]]));
        let s = t.add(a, b).unwrap();
        let w = t.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let weighted = t.hadamard(s, w).unwrap();
        let loss = t.sum(weighted).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sum_and_relu_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let l = t.sum(x).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[-1.0, 2.0]]));
        let r = t.relu(x).unwrap();
        let l = t.sum(r).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x ⊙ x) → grad 2x, reached through two edges of the same node
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[1.5, -2.0]]));
        let sq = t.hadamard(x, x).unwrap();
        let l = t.sum(sq).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(2, 2));
        assert_eq!(t.backward(x), Err(TensorError::NotScalar((2, 2))));

        let mut other = Tape::new();
        let y = other.param(Tensor::scalar(1.0));
        assert_eq!(t.backward(y), Err(TensorError::DetachedNode));
        assert!(matches!(t.relu(y), Err(TensorError::DetachedNode)));
    }

    #[test]
    fn checked_tape_rejects_non_finite() {
        let mut t = Tape::checked();
        let x = t.constant(Tensor::scalar(1e300));
        assert!(matches!(t.hadamard(x, x), Err(TensorError::NonFinite("hadamard"))));
    }

    #[test]
    fn gather_scatter_round_trip() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[1.0], &[2.0], &[3.0]]));
        let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2]);
        let g = t.gather_rows(x, idx.clone()).unwrap();
        assert_eq!(t.value(g).data(), &[3.0, 1.0, 3.0]);
        let s = t.scatter_add_rows(g, idx, 3).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 0.0, 6.0]);
        let l = t.sum(s).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 0.0, 2.0]);

        let empty: Arc<[usize]> = Arc::from(Vec::new());
        let e = t.gather_rows(x, empty.clone()).unwrap();
        assert_eq!(t.shape(e), (0, 1));
        let z = t.scatter_add_rows(e, empty, 3).unwrap();
        assert_eq!(t.value(z).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn slice_and_edge_aggregate() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let s = t.slice_cols(x, 1, 2).unwrap();
        assert_eq!(t.value(s).data(), &[2.0, 3.0, 5.0, 6.0]);
        assert!(t.slice_cols(x, 2, 2).is_err());

        let index = Arc::new(EdgeIndex {
            n: 3,
            recv: Arc::from(vec![0, 0, 2]),
            send: Arc::from(vec![1, 0, 1]),
            coeff: Arc::from(vec![0.5, 1.0, 2.0]),
        });
        let agg = t.edge_aggregate(s, index).unwrap();
        assert_eq!(t.value(agg).data(), &[4.5, 6.0, 0.0, 0.0, 10.0, 12.0]);
        let l = t.sum(agg).unwrap();
        t.backward(l).unwrap();
        // row 0 reached once with weight 1, row 1 with weights 0.5 + 2
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 2.5, 2.5]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let p = t.param(Tensor::from_rows(&[&[3.0, 4.0]]));
        let h = t.hadamard(c, p).unwrap();
        let l = t.sum(h).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(p).unwrap().data(), &[1.0, 2.0]);
        t.zero_grad();
        assert!(t.grad(p).is_none());
    }

    #[test]
    fn neg_log_pick_clamps() {
        let mut t = Tape::new();
        let p = t.param(Tensor::from_rows(&[&[0.0, 1.0], &[0.5, 0.5]]));
        let l = t
            .neg_log_pick(p, Arc::from(vec![(0, 0), (1, 1)]))
            .unwrap();
        let expected = -(PROB_EPS.ln()) - 0.5f64.ln();
        assert!((t.value(l).item().unwrap() - expected).abs() < 1e-12);
        t.backward(l).unwrap();
        assert_eq!(t.grad(p).unwrap().data(), &[0.0, 0.0, 0.0, -2.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_rows_on_simplex(vals in proptest::collection::vec(-30.0f64..30.0, 2..40)) {
                let rows = vals.len() / 2;
                let x = Tensor::from_vec(rows, 2, vals[..rows * 2].to_vec()).unwrap();
                let y = row_softmax_value(&x);
                for r in 0..rows {
                    let s: f64 = y.row(r).iter().sum();
                    prop_assert!((s - 1.0).abs() <= 1e-9);
                    prop_assert!(y.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
                }
            }

            #[test]
            fn tape_is_deterministic(vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
                let run = || {
                    let mut t = Tape::new();
                    let x = t.param(Tensor::from_vec(3, 4, vals.clone()).unwrap());
                    let w = t.param(Tensor::from_vec(4, 3, vals.iter().rev().copied().collect()).unwrap());
                    let h = t.matmul(x, w).unwrap();
                    let a = t.tanh(h).unwrap();
                    let s = t.row_softmax(a).unwrap();
                    let l = t.sum_squares(s).unwrap();
                    t.backward(l).unwrap();
                    (t.value(l).clone(), t.grad(x).unwrap().clone(), t.grad(w).unwrap().clone())
                };
                let (a, b) = (run(), run());
                prop_assert_eq!(a.0.data(), b.0.data());
                prop_assert_eq!(a.1.data(), b.1.data());
                prop_assert_eq!(a.2.data(), b.2.data());
            }
        }
    }
}
