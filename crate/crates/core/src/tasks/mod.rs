//! Synthetic multi-task regression problems and the training loop.

mod suite;
mod train;

pub use suite::{gen_suite, Family, Sample, SuiteConfig, SyntheticSuite, TaskData};
pub use train::{
    evaluate, fit_adapter, single_task_baselines, train, train_observed, NoObserver, Optimizer, OptimizerState,
    StepEvent, StepObserver, TrainConfig, TrainOutcome, TrainSession,
};
