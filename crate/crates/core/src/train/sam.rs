//! Sharpness-aware two-pass updates around a base optimizer.

use serde::{Deserialize, Serialize};

use super::optim::{sgd, BaseOptimizer, OptimizerKind};
use super::LossBreakdown;
use crate::error::{Result, TimeCfError};
use crate::tensor::Tensor;

/// Gradient norms below this produce no perturbation.
pub const MIN_GRAD_NORM: f64 = 1e-12;

/// A differentiable training objective over a list of parameter arrays.
pub trait Objective {
    /// Loss and one gradient array per parameter array, at `params`.
    fn evaluate(&self, params: &[Tensor]) -> Result<(LossBreakdown, Vec<Tensor>)>;
}

/// What the second SAM pass does with the perturbed-point gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamUpdate {
    /// Feed it to the base optimizer.
    #[default]
    BaseOptimizer,
    /// Plain `w <- w - lr * g`.
    RawSgd,
}

/// Base-optimizer state, update counter and the permanent SAM gate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub base: BaseOptimizer,
    pub updates: u64,
    pub sam_engaged: bool,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        Self {
            base: BaseOptimizer::new(kind, params),
            updates: 0,
            sam_engaged: false,
        }
    }
}

/// `rho * g / ||g||_2` over the concatenation of all gradients; zero when the
/// norm is below [`MIN_GRAD_NORM`].
pub fn sam_perturb(grads: &[Tensor], rho: f64) -> Vec<Tensor> {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let factor = if norm < MIN_GRAD_NORM {
        0.0
    } else {
        rho / norm
    };
    grads
        .iter()
        .map(|g| {
            let mut e = g.clone();
            e.data_mut().iter_mut().for_each(|v| *v *= factor);
            e
        })
        .collect()
}

fn checked(loss: LossBreakdown, state: &OptimizerState) -> Result<LossBreakdown> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TimeCfError::NonFiniteLoss {
            batch: state.updates as usize,
        })
    }
}

fn ensure_finite(params: &[Tensor]) -> Result<()> {
    if params.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(TimeCfError::Evaluation(
            "parameters became non-finite".into(),
        ))
    }
}

/// One forward/backward pass and a base-optimizer update.
pub fn base_step(
    objective: &impl Objective,
    params: &mut [Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<LossBreakdown> {
    let (loss, grads) = objective.evaluate(params)?;
    let loss = checked(loss, state)?;
    state.base.apply(params, &grads, lr);
    ensure_finite(params)?;
    state.updates += 1;
    Ok(loss)
}

/// Gradient at `w`, perturbation, gradient at `w + e`, then an update of the
/// restored `w` with the second gradient. Returns the loss at `w`.
pub fn sam_step(
    objective: &impl Objective,
    params: &mut [Tensor],
    state: &mut OptimizerState,
    lr: f64,
    rho: f64,
    update: SamUpdate,
) -> Result<LossBreakdown> {
    let (loss, grads) = objective.evaluate(params)?;
    let loss = checked(loss, state)?;
    let eps = sam_perturb(&grads, rho);
    let saved: Vec<Tensor> = params.to_vec();
    for (p, e) in params.iter_mut().zip(&eps) {
        for (w, d) in p.data_mut().iter_mut().zip(e.data()) {
            *w += d;
        }
    }
    let perturbed = objective.evaluate(params);
    params.clone_from_slice(&saved);
    let (perturbed_loss, sharp_grads) = perturbed?;
    checked(perturbed_loss, state)?;
    match update {
        SamUpdate::BaseOptimizer => state.base.apply(params, &sharp_grads, lr),
        SamUpdate::RawSgd => sgd(params, &sharp_grads, lr),
    }
    ensure_finite(params)?;
    state.updates += 1;
    Ok(loss)
}

/// Engages SAM permanently once `updates >= threshold`, then dispatches.
pub fn gated_step(
    objective: &impl Objective,
    params: &mut [Tensor],
    state: &mut OptimizerState,
    lr: f64,
    rho: f64,
    threshold: u64,
    update: SamUpdate,
) -> Result<LossBreakdown> {
    if !state.sam_engaged && state.updates >= threshold {
        state.sam_engaged = true;
    }
    if state.sam_engaged {
        sam_step(objective, params, state, lr, rho, update)
    } else {
        base_step(objective, params, state, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `sum_i c_i w_i^2`.
    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn evaluate(&self, params: &[Tensor]) -> Result<(LossBreakdown, Vec<Tensor>)> {
            let w = params[0].data();
            let loss: f64 = w.iter().zip(&self.0).map(|(w, c)| c * w * w).sum();
            let g = w.iter().zip(&self.0).map(|(w, c)| 2.0 * c * w).collect();
            Ok((
                LossBreakdown {
                    total: loss,
                    freq: 0.0,
                    mse: loss,
                },
                vec![Tensor::vector(g)],
            ))
        }
    }

    #[test]
    fn zero_radius_gives_zero_perturbation() {
        let e = sam_perturb(&[Tensor::vector(vec![3.0, 4.0])], 0.0);
        assert_eq!(e[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn unit_norm_gradient_is_scaled_by_rho() {
        let g = [Tensor::vector(vec![0.6]), Tensor::vector(vec![0.0, 0.8])];
        let e = sam_perturb(&g, 0.05);
        assert!((e[0].data()[0] - 0.03).abs() < 1e-15);
        assert!((e[1].data()[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_guarded() {
        let e = sam_perturb(&[Tensor::zeros(&[3])], 0.1);
        assert!(e[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_hand_example() {
        let obj = Quadratic(vec![1.0]);
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &p);
        let loss = sam_step(&obj, &mut p, &mut st, 0.1, 0.1, SamUpdate::BaseOptimizer).unwrap();
        assert_eq!(loss.total, 1.0);
        assert!((p[0].data()[0] - 0.78).abs() < 1e-15);
        assert_eq!(st.updates, 1);
    }

    #[test]
    fn gate_engages_at_threshold_and_stays() {
        let obj = Quadratic(vec![1.0, 3.0]);
        let mut p = vec![Tensor::vector(vec![1.0, -1.0])];
        let mut st = OptimizerState::new(OptimizerKind::Adam, &p);
        for i in 0..5 {
            gated_step(
                &obj,
                &mut p,
                &mut st,
                0.01,
                0.05,
                2,
                SamUpdate::BaseOptimizer,
            )
            .unwrap();
            assert_eq!(st.sam_engaged, i >= 2);
        }
    }

    #[test]
    fn convex_quadratic_loss_does_not_increase() {
        let obj = Quadratic(vec![1.0, 0.5, 2.0]);
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &p);
        let (c, lr, rho) = ([1.0, 0.5, 2.0], 0.01, 0.05);
        let mut oracle = [1.0, -2.0, 0.5];
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = sam_step(&obj, &mut p, &mut st, lr, rho, SamUpdate::BaseOptimizer).unwrap();
            assert!(loss.total <= prev);
            prev = loss.total;

            let g: Vec<f64> = (0..3).map(|i| 2.0 * c[i] * oracle[i]).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..3 {
                let shifted = oracle[i] + rho * g[i] / norm;
                oracle[i] -= lr * 2.0 * c[i] * shifted;
            }
            for (got, want) in p[0].data().iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    struct Broken;

    impl Objective for Broken {
        fn evaluate(&self, params: &[Tensor]) -> Result<(LossBreakdown, Vec<Tensor>)> {
            let nan = LossBreakdown {
                total: f64::NAN,
                freq: 0.0,
                mse: 0.0,
            };
            Ok((nan, vec![Tensor::zeros(params[0].shape())]))
        }
    }

    #[test]
    fn non_finite_loss_aborts_without_update() {
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut st = OptimizerState::new(OptimizerKind::Adam, &p);
        let err = base_step(&Broken, &mut p, &mut st, 0.1).unwrap_err();
        assert!(matches!(err, TimeCfError::NonFiniteLoss { .. }));
        assert_eq!(p[0].data(), &[1.0]);
        assert_eq!(st.updates, 0);
    }
}
