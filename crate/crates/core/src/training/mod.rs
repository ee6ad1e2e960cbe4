//! Adam, the plateau learning-rate schedule, and the training, evaluation
//! and cross-validation loops.

pub mod adam;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use schedule::LrSchedule;
pub use trainer::{
    cross_validate, evaluate, kfold_split, train, EpochLog, Evaluation, FoldResult, TrainConfig,
    TrainOutcome, TrainOutputs,
};
