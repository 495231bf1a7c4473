use serde::{Deserialize, Serialize};

use crate::config::OptimizerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates of one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// Bias-corrected adaptive-moment update, or plain gradient descent.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut MomentState,
    hyper: &OptimizerHyper,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    match hyper.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let t = state.t as i32;
            let c1 = 1.0 - hyper.beta1.powi(t);
            let c2 = 1.0 - hyper.beta2.powi(t);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
                *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
                *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let hyper = OptimizerHyper { kind, ..Default::default() };
            let mut p = vec![0.5, -2.0];
            let mut st = MomentState::new(2);
            optimizer_step(&mut p, &[0.0, 0.0], &mut st, &hyper, 0.1).unwrap();
            assert_eq!(p, vec![0.5, -2.0]);
        }
    }

    #[test]
    fn sgd_is_plain_descent() {
        let hyper = OptimizerHyper { kind: OptimizerKind::Sgd, ..Default::default() };
        let mut p = vec![1.0, 1.0];
        optimizer_step(&mut p, &[0.5, -3.0], &mut MomentState::new(2), &hyper, 0.1).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, 1.0 - 0.1 * -3.0]);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let hyper = OptimizerHyper::default();
        for g in [1e-3, 1.0, 250.0] {
            let mut p = vec![0.0];
            optimizer_step(&mut p, &[g], &mut MomentState::new(1), &hyper, 0.01).unwrap();
            // bias-corrected moments are g and g², so the step is lr·g/(|g|+ε)
            let expected = 0.01 * g / (g.abs() + 1e-8);
            assert!((-p[0] - expected).abs() < 1e-15);
            assert!((-p[0] - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 3];
        let err = optimizer_step(&mut p, &[1.0], &mut MomentState::new(3), &OptimizerHyper::default(), 0.1);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }
}
