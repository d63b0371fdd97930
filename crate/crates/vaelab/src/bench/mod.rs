//! Experiment harness: configuration, persistence, dataset ingestion, and
//! the drivers behind the CLI subcommands.

mod checkpoint;
mod config;
mod csv;
mod drivers;
mod idx;

pub use checkpoint::{
    arrays_into_model, load_checkpoint, model_to_arrays, save_checkpoint, NamedArrays,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{config_keys, ExperimentConfig, ExperimentKind, Scale};
pub use csv::{
    HistogramRow, NormRow, ResultRow, HISTOGRAMS_HEADER, NORMS_HEADER, RESULTS_HEADER,
};
pub use drivers::{
    run_covariance_study, run_mnist_denoise, run_phase_transition, run_pruning_study, run_selftest,
    PruneStudy, RunOutputs,
};
pub use idx::{encode_images, load_idx, parse_idx, IdxData, IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS};
