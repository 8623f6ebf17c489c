//! Pre-training and the downstream evaluation protocols.

mod data;
mod fit;
mod protocols;
mod results;

pub use data::{prepare, LabeledSet, Prepared};
pub use fit::{pretrain, predict, pretext_loss, EpochLog, PretrainOutcome};
pub use protocols::{
    crossvalidate, finetune_shared, linear_probe, lowdata, random_checkpoint, supervised_baseline,
    transfer, LowDataOutcome, TransferMode,
};
pub use results::{append_results, write_report, RESULTS_HEADER, RESULTS_SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `None` disables
    /// early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: 30,
            batch_size: 64,
            patience: Some(5),
            seed: 0,
            runs: 10,
        }
    }
}

impl TrainConfig {
    /// Pre-training schedule for small synthetic runs on one CPU core.
    pub fn desk_pretrain() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 8,
            batch_size: 16,
            patience: Some(5),
            seed: 7,
            runs: 1,
        }
    }

    /// Linear-probe schedule matching [`TrainConfig::desk_pretrain`]. The
    /// classifier sees precomputed embeddings, so many epochs are cheap.
    pub fn desk_probe() -> Self {
        Self {
            learning_rate: 1e-2,
            max_epochs: 100,
            batch_size: 64,
            patience: Some(10),
            seed: 3,
            runs: 10,
        }
    }

    /// End-to-end fine-tuning on a handful of labeled windows.
    pub fn desk_lowdata() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 50,
            batch_size: 8,
            patience: None,
            seed: 5,
            runs: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.runs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("runs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}
