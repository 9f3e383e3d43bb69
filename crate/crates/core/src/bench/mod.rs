//! Experiment harness: synthetic corpora with known answers, the
//! transductive run protocol, metrics, ratio sweeps and comparison tables.

mod experiment;
mod metrics;
mod sweep;
mod synthetic;
mod table;

pub use experiment::{
    build_split, derive_seed, prepare_data, run_cell, run_experiment, run_methods, train_and_predict,
    Bm25Settings, DataSource, ExperimentSpec, FeatureSource, Labeling, Method, MethodConfigs, MethodOutput,
    NnpuSettings, Prepared, Split,
};
pub use metrics::{
    all_positive_f1, average_precision, best_cutoff, evaluate_transductive, quantile, Confusion, EvalReport,
    Summary,
};
pub use sweep::{normalize_ratios, spread, sweep_ratio, SweepResult, SweepRow};
pub use synthetic::{
    generate_synthetic, generate_text, GaussianPosterior, SyntheticCorpus, SyntheticSpec, TextSpec,
};
pub use table::{emit_table, ComparisonTable, TableRow};
