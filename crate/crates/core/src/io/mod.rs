//! Experiment configuration, datasets and checkpoint files.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod idx;

pub use checkpoint::{Checkpoint, ParamBlock};
pub use config::ExperimentConfig;
pub use dataset::{make_synthetic, Dataset, Split};
pub use idx::{load_idx, IdxArray, IdxData};
