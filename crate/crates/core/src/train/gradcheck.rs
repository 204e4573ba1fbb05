//! End-to-end finite-difference check of the training-loss gradient, reported
//! per parameter group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::BatchObjective;
use super::sam::Objective;
use super::samfre_loss;
use crate::data::WindowInstance;
use crate::error::Result;
use crate::model::{Batch, Model, ModelConfig, ParamSpec};
use crate::tensor::{central_differences, max_relative_error, primitive_checks, Tape, Tensor};

/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const BATCH: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub params: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub trials: usize,
    pub groups: Vec<GroupError>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.max_rel_error < GRADCHECK_TOLERANCE)
    }

    fn absorb(&mut self, specs: &[ParamSpec], errors: &[f64]) {
        for (spec, &err) in specs.iter().zip(errors) {
            let group = spec.group();
            match self.groups.iter_mut().find(|g| g.group == group) {
                Some(g) => {
                    g.max_rel_error = g.max_rel_error.max(err);
                    if self.trials == 0 {
                        g.params += spec.len();
                    }
                }
                None => self.groups.push(GroupError {
                    group: group.to_string(),
                    params: spec.len(),
                    max_rel_error: err,
                }),
            }
        }
    }
}

fn random_instances(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<WindowInstance> {
    (0..BATCH)
        .map(|c| WindowInstance {
            channel: c,
            x: (0..cfg.lookback)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect(),
            y: (0..cfg.horizon).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            x_mark: (0..cfg.lookback * cfg.time_features)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            y_mark: vec![0.0; cfg.horizon * cfg.time_features],
        })
        .collect()
}

fn loss_only(model: &Model, params: &[Tensor], batch: &Batch, alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.params().bind_values(&mut tape, params, false);
    let pred = model.forward(&mut tape, &p, batch)?;
    let target = tape.constant(batch.targets().expect("targets present").clone());
    let loss = samfre_loss(&mut tape, pred, target, alpha)?;
    Ok(tape.value(loss.total).data()[0])
}

/// Max relative error of every parameter array, given analytic and numeric
/// gradients in layout order.
pub fn compare(analytic: &[Tensor], numeric: &[Vec<f64>]) -> Vec<f64> {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| max_relative_error(a.data(), n))
        .collect()
}

fn model_trial(cfg: &ModelConfig, alpha: f64, seed: u64) -> Result<(Vec<ParamSpec>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(cfg.clone(), seed)?;
    let instances = random_instances(cfg, &mut rng);
    let batch = Batch::from_instances(cfg, &instances)?;
    let objective = BatchObjective::new(&model, &instances, alpha, true)?;
    let params = model.params().tensors().to_vec();
    let (_, analytic) = objective.evaluate(&params)?;

    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut probe = params.clone();
        let fd = central_differences(
            |values| {
                probe[i].data_mut().copy_from_slice(values);
                loss_only(&model, &probe, &batch, alpha)
            },
            params[i].data(),
            STEP,
        )?;
        numeric.push(fd);
    }
    Ok((
        model.params().specs().to_vec(),
        compare(&analytic, &numeric),
    ))
}

/// Runs `trials` checks on freshly seeded models and random batches. Trials
/// run in parallel; trial `i` is seeded with `seed + i`.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<GradReport> {
    cfg.validate()?;
    let results = (0..trials as u64)
        .into_par_iter()
        .map(|i| model_trial(cfg, alpha, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut report = GradReport::default();
    for (specs, errors) in results {
        report.absorb(&specs, &errors);
        report.trials += 1;
    }
    Ok(report)
}

/// Runs `trials` random instances of every tape primitive. Groups are named
/// `op:<primitive>` and report no parameter count.
pub fn gradcheck_primitives(trials: usize, seed: u64) -> Result<GradReport> {
    let groups = primitive_checks()
        .par_iter()
        .enumerate()
        .filter(|_| trials > 0)
        .map(|(i, check)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
            let mut worst = 0.0f64;
            for _ in 0..trials {
                worst = worst.max(check.trial(&mut rng, STEP)?);
            }
            Ok(GroupError {
                group: format!("op:{}", check.name),
                params: 0,
                max_rel_error: worst,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradReport { trials, groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_empty_success() {
        let r = gradcheck_model(&ModelConfig::tiny(), 0.5, 0, 1).unwrap();
        assert!(r.groups.is_empty() && r.passed());
    }

    #[test]
    fn tiny_model_passes() {
        let r = gradcheck_model(&ModelConfig::tiny(), 0.5, 1, 2021).unwrap();
        assert!(r.passed(), "{r:#?}");
        assert!(r.groups.iter().any(|g| g.group == "blocks.1.alpha"));
    }

    #[test]
    fn primitive_sweep_covers_every_op() {
        let r = gradcheck_primitives(2, 9).unwrap();
        assert_eq!(r.groups.len(), primitive_checks().len());
        assert!(r.passed(), "{r:#?}");
        assert!(gradcheck_primitives(0, 9).unwrap().groups.is_empty());
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let analytic = vec![Tensor::vector(vec![1.0, 2.0])];
        let numeric = vec![vec![1.0, 2.0 * 1.01]];
        assert!(compare(&analytic, &numeric)[0] > GRADCHECK_TOLERANCE);
    }
}
