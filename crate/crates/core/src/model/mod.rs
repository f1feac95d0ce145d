//! The multi-graph recurrent network: per-graph GCNs, attention fusion,
//! stacked LSTM and a two-way softmax head, trained with Adam on
//! hand-derived gradients.

mod adam;
mod checkpoint;
mod config;
pub mod gradcheck;
pub mod layers;
mod network;
mod params;
mod train;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use config::ModelConfig;
pub use layers::{attention_aggregate, bce_loss, concat_features, gcn_forward, lstm_forward, predict};
pub use network::{DayTrace, ForwardTrace, Mgrn, Sample};
pub use params::{LstmLayer, MgrnParams};
pub use train::{train, EpochRecord, History, LabeledSet, TrainInput};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row count mismatch: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("window for day index {day} reaches outside the feature calendar")]
    MissingDay { day: usize },
    #[error("trace was recorded against different parameters")]
    StaleTrace,
    #[error("no training samples")]
    EmptyDataset,
    #[error("at least one graph is required")]
    NoGraphs,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
