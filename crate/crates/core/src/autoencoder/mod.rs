//! Convolutional autoencoder over chart images.
//!
//! Everything runs on the CPU in `f64`. The encoder's global-average-pooled
//! output is the stock embedding; the decoder exists only to give the
//! encoder a reconstruction objective (pixel MSE on `[0, 1]` RGB).

mod arch;
mod checkpoint;
mod model;
pub mod ops;
mod store;
mod train;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{CaeArchitecture, ConvStage, DecoderStage, Preset, Shape};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use model::{mse, Cae};
pub use store::{read_embedding_store, write_embedding_store};
pub use train::{load_manifest_images, train, EpochLog, TrainLog};

use crate::chart_render::{ChartImage, RenderError};

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("architecture: {0}")]
    Architecture(String),
    #[error("image size mismatch: network expects {expected}x{expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] RenderError),
    #[error("image has no (symbol, start date) provenance")]
    MissingProvenance,
    #[error("embedding store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate on a loss plateau.
    pub lr_decay_factor: f64,
    /// Epochs without an improvement of at least `min_improvement` before decaying.
    pub plateau_patience: usize,
    pub min_improvement: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.001,
            lr_decay_factor: 0.1,
            plateau_patience: 3,
            min_improvement: 1e-4,
            max_epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AutoencoderError> {
        let bad = |m: &str| Err(AutoencoderError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must be in (0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.min_improvement >= 0.0) {
            return bad("min_improvement must be non-negative");
        }
        Ok(())
    }
}

/// Bottleneck vector for one chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub symbol: String,
    pub window_start: NaiveDate,
    pub vector: Vec<f64>,
    pub model_id: String,
}

/// Encodes charts carrying `(symbol, start)` provenance.
pub fn encode(images: &[ChartImage], ckpt: &Checkpoint) -> Result<Vec<Embedding>, AutoencoderError> {
    images
        .iter()
        .map(|img| {
            let (symbol, start) = img.source.clone().ok_or(AutoencoderError::MissingProvenance)?;
            Ok(Embedding {
                symbol,
                window_start: start,
                vector: ckpt.encode_image(img)?,
                model_id: ckpt.model_id().to_string(),
            })
        })
        .collect()
}

/// Reconstruction as a `[3, h, w]` tensor and its MSE against the input.
pub fn reconstruct(img: &ChartImage, ckpt: &Checkpoint) -> Result<(Vec<f64>, f64), AutoencoderError> {
    ckpt.check_image(img)?;
    ckpt.model().reconstruct(&img.to_tensor())
}
