//! Metrics, label remapping, synthetic domains and the cross-domain experiment.

pub mod experiment;
pub mod labels;
pub mod metrics;
pub mod synthetic;

pub use experiment::{
    run_crossdomain_experiment, run_experiment, CrossDomainReport, ExperimentSpec, SeedOutcome,
};
pub use labels::{remap_labels, LabelMap, RemapReport, CANONICAL_CLASSES};
pub use metrics::{
    confusion, mean_metrics, metrics, per_class, report_csv, Averaging, ConfusionMatrix, Metrics,
    MetricsRow, REPORT_HEADER,
};
pub use synthetic::{render_synthetic, ClassPrototype, SyntheticDomainSpec};
