//! Frequency-blended loss, sharpness-aware updates and the training loop.

mod fit;
pub mod gradcheck;
mod loss;
mod objective;
mod optim;
mod sam;

pub use fit::{fit, FitReport, LogRecord, SamThreshold, TrainConfig};
pub use gradcheck::{
    gradcheck_model, gradcheck_primitives, GradReport, GroupError, GRADCHECK_TOLERANCE,
};
pub use loss::{samfre_loss, LossBreakdown, LossVars};
pub use objective::{evaluate, metrics, BatchObjective, Metrics, EVAL_CHUNK, GRAD_CHUNK};
pub use optim::{sgd, BaseOptimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use sam::{
    base_step, gated_step, sam_perturb, sam_step, Objective, OptimizerState, SamUpdate,
    MIN_GRAD_NORM,
};
