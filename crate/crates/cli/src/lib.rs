//! Experiment orchestration on top of `fairrel-core`: configs, multi-seed
//! runs, true-versus-predicted comparisons, imbalance sweeps and figures.
//!
//! Every run writes a self-contained directory (see [`layout`]); all
//! aggregate numbers are recomputed from the per-seed files in it.

pub mod compare;
pub mod config;
pub mod error;
pub mod layout;
pub mod render;
pub mod run;
pub mod sweep;

pub use compare::{compare_fairness, CompareReport};
pub use config::{DatasetKind, ExperimentConfig, Preset};
pub use error::RunError;
pub use render::render;
pub use run::{run_experiment, RunOptions, RunOutcome};
pub use sweep::{sweep_imbalance, SweepReport};
