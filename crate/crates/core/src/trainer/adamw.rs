use crate::ndops::{Tensor, TensorError};

use super::config::AdamWConfig;

/// First and second moment estimates for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One decoupled-weight-decay Adam update. A missing gradient counts as zero.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
    state: &mut AdamState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adamw_step",
            lhs: (params.len(), grads.len()),
            rhs: (state.m.len(), 0),
        });
    }
    for (k, p) in params.iter().enumerate() {
        let want = p.shape();
        let got = grads[k].map_or(want, Tensor::shape);
        if got != want || state.m[k].shape() != want {
            return Err(TensorError::ShapeMismatch {
                op: "adamw_step",
                lhs: want,
                rhs: got,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        let theta = p.data_mut();
        for i in 0..theta.len() {
            let g = grads[k].map_or(0.0, |g| g.data()[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let before = p.clone();
        let g = Tensor::zeros(2, 2);
        let mut st = AdamState::new([&p]);
        for _ in 0..3 {
            adamw_step(&mut [&mut p], &[Some(&g)], &mut st, &no_decay(), 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        adamw_step(&mut [&mut p], &[Some(&g)], &mut st, &no_decay(), 0.1).unwrap();
        assert!((p.item().unwrap() + 0.1).abs() < 1e-8);
    }

    #[test]
    fn decay_is_decoupled() {
        // zero gradient: only the decay term acts, θ ← θ − lr·wd·θ
        let mut p = Tensor::scalar(2.0);
        let mut st = AdamState::new([&p]);
        let cfg = AdamWConfig::default();
        adamw_step(&mut [&mut p], &[None], &mut st, &cfg, 0.5).unwrap();
        assert!((p.item().unwrap() - (2.0 - 0.5 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = Tensor::scalar(2.0 * p.item().unwrap());
            adamw_step(&mut [&mut p], &[Some(&g)], &mut st, &AdamWConfig::default(), 0.05).unwrap();
            let now = p.item().unwrap().abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::zeros(2, 2);
        let g = Tensor::zeros(2, 3);
        let mut st = AdamState::new([&p]);
        assert!(adamw_step(&mut [&mut p], &[Some(&g)], &mut st, &no_decay(), 0.1).is_err());
        assert_eq!(st.step, 0);
    }
}
