//! Whittle-index learners: tabular, linear and two-layer ReLU, all driven by
//! the same two-timescale loop.

pub mod policy;
pub mod schedule;
pub mod tabular;
pub mod td;
pub mod train;

pub use policy::{epsilon_greedy, top_k_policy};
pub use schedule::StepSchedule;
pub use tabular::TabularLearnerState;
pub use td::{td_error, LearnerState, NeuralLearnerState, StepIndexing, StepParams, StepRecord};
pub use train::{train_all, train_index, train_index_from, Algorithm, Model, TrainAllOutcome, TrainConfig, TrainOutcome};
