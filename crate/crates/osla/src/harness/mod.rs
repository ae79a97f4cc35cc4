//! Scenario generation, dataset ingestion, experiment orchestration,
//! result persistence, and plot-table emission.

pub mod experiment;
pub mod ingest;
pub mod plot;
pub mod scenario;
pub mod suite;

pub use experiment::{
    dyadic_checkpoints, run_experiment, BoundEvalSpec, BoundEvalSpecRef, BoundPoint,
    ExperimentOptions, ExperimentResult, PolicyDescriptor, RESULT_SCHEMA_VERSION,
};
pub use ingest::{ingest_sparse_images, write_dense_rows, write_sparse_images};
pub use plot::{emit_plot_data, load_results_dir, PlotKind};
pub use scenario::{
    generate_stream, synthesize_digit_rows, GeneratedStream, NoiseLaw, ScenarioSpec, SignalLaw,
};
pub use suite::{run_suite, ScenarioConfig, SuiteConfig, SuiteOutput, TrialFailure};
