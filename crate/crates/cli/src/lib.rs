//! Experiment runner for the dcsmc engine: configuration files, dataset
//! ingestion, replicated runs with CSV and JSON output, and the worker
//! process used for multi-process runs.

pub mod config;
pub mod dataset;
pub mod error;
pub mod lattice_obs;
pub mod runner;
pub mod summary;
pub mod worker;

pub use config::{ExperimentConfig, Method, ModelKind};
pub use dataset::{ingest_dataset, HierDatasetRecord, IngestReport};
pub use error::{CliError, Result};
pub use runner::{run_experiment, ExperimentOutput, Replicate};
