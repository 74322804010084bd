//! Experiment harness: config, offline data, pretraining, training, reports.

pub mod bootstrap;
pub mod config;
pub mod pretrain;
pub mod report;
pub mod train;

pub use bootstrap::{bootstrap_dataset, corridor_dataset};
pub use config::RunConfig;
pub use pretrain::{pretrain_existing, pretrain_generator, PretrainOutcome, PretrainSettings};
pub use report::{average, load_run, report, AveragedPoint, RunCurves};
pub use train::{evaluate, metrics_csv, read_metrics, train, train_seed, Agent, EvalSummary, MetricsRow, SeedRun, METRICS_HEADER};
