//! Ranking, metrics and the experimental harness.

pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod significance;

pub use experiment::{
    render_sweep_table, stratified_subsample, Experiment, ExperimentConfig, ExperimentData, SweepRow, Variant,
    VariantOutcome,
};
pub use metrics::{average_precision, metrics_suite, read_run, write_run, MetricsReport, QueryMetrics, RankedList};
pub use pipeline::{FeatureBuilder, Pipeline, PoolFeatures};
pub use significance::paired_randomization_test;
