//! Dense reverse-mode autodiff, the fully connected network used by every
//! trained model, the Adamax optimizer, and gradient checking.

mod adamax;
mod checkpoint;
pub mod gradcheck;
mod mlp;
mod tape;

pub use adamax::{Adamax, AdamaxConfig};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{BatchNorm, Bound, Layer, Mlp, MlpConfig, Mode};
pub use tape::{sigmoid, Gradients, Tape, Var};

/// Minibatch settings shared by every trained model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamaxConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            optimizer: AdamaxConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(crate::Error::Config(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        if !(self.optimizer.learning_rate >= 0.0) {
            return Err(crate::Error::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}
