//! Two-stage training: supervised pre-training with straight-through gates,
//! then policy-gradient refinement with sampled gates.

mod eval;
mod exact;
mod returns;
mod schedule;
mod step;
mod trainer;

pub use eval::{evaluate, EvalDecisions, EvalOptions, Evaluation};
pub use exact::{enumerate_exact, MAX_ENUMERATED_GATES};
pub use returns::{clamped_log_prob, compute_returns, ReturnRecord, RewardConfig};
pub use schedule::TrainSchedule;
pub use step::{hybrid_step, predictions, supervised_step, HybridOptions, HybridStats, StepStats, Weighting};
pub use trainer::{
    pretrain_supervised, refine_hybrid, sdv_baseline, DataSplits, EpochMetrics, Objective, Trainer, TrainerState,
};
