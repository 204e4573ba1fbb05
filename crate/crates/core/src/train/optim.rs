use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order update rule with its per-parameter state.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseOptimizer {
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
    },
    Sgd,
}

impl BaseOptimizer {
    /// Fresh state sized for `params`.
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        match kind {
            OptimizerKind::Adam => BaseOptimizer::Adam {
                m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
                v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
                step: 0,
            },
            OptimizerKind::Sgd => BaseOptimizer::Sgd,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            BaseOptimizer::Adam { .. } => OptimizerKind::Adam,
            BaseOptimizer::Sgd => OptimizerKind::Sgd,
        }
    }

    /// Applies one update with gradient `grads` and learning rate `lr`.
    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(
            params.len(),
            grads.len(),
            "parameter/gradient count mismatch"
        );
        match self {
            BaseOptimizer::Sgd => sgd(params, grads, lr),
            BaseOptimizer::Adam { m, v, step } => {
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
                    for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// `w <- w - lr * g`.
pub fn sgd(params: &mut [Tensor], grads: &[Tensor], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &g) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * g;
        }
    }
}
