//! Dataset generation, surrogate training, policy training and gradient checks.

pub mod dataset;
pub mod gradcheck;
pub mod policy;
pub mod supervised;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::optim::AdamConfig;

pub use dataset::{gen_supervised_dataset, DatasetMode, SupervisedSample};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use policy::{policy_loss, train_policy, ChainMode, PolicySetup};
pub use supervised::train_supervised;


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Grid used for targets (supervised) or Grams (analytic policy).
    pub grid_m: usize,
    pub n_train: usize,
    pub shuffle_seed: u64,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Redraw a random phase per user weight column every epoch (supervised only).
    #[serde(default)]
    pub phase_augment: bool,
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 at the first epoch down to `floor` at the last.
    Cosine { floor: f64 },
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Cosine { floor } => {
                let t = if epochs > 1 {
                    (epoch.saturating_sub(1)) as f64 / (epochs - 1) as f64
                } else {
                    0.0
                };
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

impl TrainHyper {
    pub fn supervised() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 400,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grid_m: 256,
            n_train: 2000,
            shuffle_seed: 0,
            schedule: LrSchedule::Constant,
            phase_augment: true,
        }
    }

    pub fn policy() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            phase_augment: false,
            ..Self::supervised()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let LrSchedule::Cosine { floor } = self.schedule {
            if !(0.0..=1.0).contains(&floor) {
                return Err(crate::Error::InvalidInput(format!("cosine floor {floor} outside [0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.n_train == 0 {
            return Err(crate::Error::InvalidInput(format!(
                "learning rate, batch size, epochs and training-set size must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation NMSE (supervised) or mean exact sum SE (policy).
    pub validation: f64,
    #[serde(default)]
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub network: String,
    pub hyper: TrainHyper,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub wall_clock_s: f64,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}
