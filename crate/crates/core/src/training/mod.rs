//! Loss assembly, optimization, the training loop, checkpoints and
//! evaluation.

pub mod checkpoint;
pub mod losses;
pub mod optim;
pub mod run;
mod trainer;


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub use checkpoint::Checkpoint;
pub use losses::{bce_binary_loss, ctc_loss, l1_loss, total_loss, LossBreakdown};
pub use optim::OptimizerConfig;
pub use run::{run, RunOptions};
pub use trainer::{EvalReport, ItemRandomness, StepReport, TrainState, Trainer};

/// Everything that shapes a run's numbers. Stored in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// The aligner's diagonal prior is applied for this many steps.
    pub prior_steps: u64,
    /// Prior standard deviation as a fraction of the utterance length.
    pub prior_width: f64,
    /// Mix speaker statistics with a batch-shuffled partner in the LD encoder.
    pub mix_statistics: bool,
    /// Start the LD projection bias at the mean training log-mel frame.
    pub init_output_bias: bool,
    /// Table sizes and the SSL width are filled in from the corpus.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            prior_steps: 500,
            prior_width: 0.2,
            mix_statistics: true,
            init_output_bias: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.prior_width > 0.0) {
            return Err(Error::Config(format!(
                "prior_width {} must be positive",
                self.prior_width
            )));
        }
        self.optimizer.validate()?;
        self.model.validate()
    }
}
