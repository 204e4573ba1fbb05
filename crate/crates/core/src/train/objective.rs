//! Batch loss and gradient of the forecaster, split into fixed-size chunks
//! that are evaluated in parallel and reduced in a fixed order.

use rayon::prelude::*;

use super::sam::Objective;
use super::{samfre_loss, LossBreakdown};
use crate::data::{WindowInstance, WindowSet};
use crate::error::{Result, TimeCfError};
use crate::model::{Batch, Model};
use crate::tensor::{Tape, Tensor};

/// Instances per gradient chunk.
pub const GRAD_CHUNK: usize = 16;
/// Instances per evaluation chunk.
pub const EVAL_CHUNK: usize = 32;

/// Blended loss of one batch of windows under a fixed model layout.
pub struct BatchObjective<'a> {
    model: &'a Model,
    chunks: Vec<Batch>,
    total: usize,
    alpha: f64,
    deterministic: bool,
}

impl<'a> BatchObjective<'a> {
    pub fn new(
        model: &'a Model,
        instances: &[WindowInstance],
        alpha: f64,
        deterministic: bool,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(TimeCfError::Usage("empty batch".into()));
        }
        let chunks = instances
            .chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(c, part)| {
                Batch::from_instances(model.config(), part).map_err(|e| match e {
                    TimeCfError::Batch { index, source } => TimeCfError::Batch {
                        index: c * GRAD_CHUNK + index,
                        source,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            chunks,
            total: instances.len(),
            alpha,
            deterministic,
        })
    }

    fn chunk(&self, batch: &Batch, params: &[Tensor]) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let weight = batch.len() as f64 / self.total as f64;
        let mut tape = Tape::new();
        let p = self.model.params().bind_values(&mut tape, params, true);
        let pred = self.model.forward(&mut tape, &p, batch)?;
        let target = tape.constant(
            batch
                .targets()
                .expect("training batches carry targets")
                .clone(),
        );
        let loss = samfre_loss(&mut tape, pred, target, self.alpha)?;
        let seed = tape.scale(loss.total, weight);
        tape.backward(seed)?;
        let grads = p
            .vars()
            .iter()
            .zip(params)
            .map(|(&v, w)| match tape.grad(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(w.shape()),
            })
            .collect();
        let mut breakdown = LossBreakdown::default();
        breakdown.add_weighted(&loss.breakdown(&tape), weight);
        Ok((breakdown, grads))
    }
}

fn merge(
    a: (LossBreakdown, Vec<Tensor>),
    b: (LossBreakdown, Vec<Tensor>),
) -> (LossBreakdown, Vec<Tensor>) {
    let (mut la, mut ga) = a;
    la.add_weighted(&b.0, 1.0);
    for (x, y) in ga.iter_mut().zip(&b.1) {
        for (u, v) in x.data_mut().iter_mut().zip(y.data()) {
            *u += v;
        }
    }
    (la, ga)
}

impl Objective for BatchObjective<'_> {
    fn evaluate(&self, params: &[Tensor]) -> Result<(LossBreakdown, Vec<Tensor>)> {
        if self.deterministic {
            let parts = self
                .chunks
                .par_iter()
                .map(|b| self.chunk(b, params))
                .collect::<Result<Vec<_>>>()?;
            let mut iter = parts.into_iter();
            let first = iter.next().expect("at least one chunk");
            Ok(iter.fold(first, merge))
        } else {
            self.chunks
                .par_iter()
                .map(|b| self.chunk(b, params))
                .try_reduce_with(|a, b| Ok(merge(a, b)))
                .expect("at least one chunk")
        }
    }
}

/// Mean squared and mean absolute error of the model's forecasts over every
/// window of `set`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// `(mse, mae)` in the standardized space of `set`.
pub fn evaluate(model: &Model, set: &WindowSet) -> Result<Metrics> {
    if set.is_empty() {
        return Err(TimeCfError::Usage("cannot evaluate an empty split".into()));
    }
    let n = set.len();
    let starts: Vec<usize> = (0..n).step_by(EVAL_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let instances: Vec<WindowInstance> = (s..(s + EVAL_CHUNK).min(n))
                .map(|i| set.instance(i))
                .collect();
            let preds = model.predict(&instances)?;
            let mut sq = 0.0;
            let mut abs = 0.0;
            for (inst, pred) in instances.iter().zip(&preds) {
                for (p, y) in pred.iter().zip(&inst.y) {
                    sq += (p - y) * (p - y);
                    abs += (p - y).abs();
                }
            }
            Ok((sq, abs))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sq, abs) = parts
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let count = (n * set.horizon()) as f64;
    Ok(Metrics {
        mse: sq / count,
        mae: abs / count,
    })
}

/// Metrics of explicit forecasts against targets.
pub fn metrics(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Metrics {
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut count = 0usize;
    for (p, y) in preds.iter().zip(targets) {
        for (p, y) in p.iter().zip(y) {
            sq += (p - y) * (p - y);
            abs += (p - y).abs();
            count += 1;
        }
    }
    let count = count.max(1) as f64;
    Metrics {
        mse: sq / count,
        mae: abs / count,
    }
}
