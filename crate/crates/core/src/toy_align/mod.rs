//! Tabular toy policy trained with the preference objectives, plus the
//! finite-difference gradient harness.
//!
//! ```
//! use prefalign::toy_align::{ToyPolicy, UNCONDITIONAL};
//!
//! let p = ToyPolicy::uniform(2, 4);
//! let lp = p.logprob(UNCONDITIONAL, &[0, 3]).unwrap();
//! assert!((lp - 2.0 * 0.25f64.ln()).abs() < 1e-12);
//! ```

mod data;
mod gradcheck;
mod policy;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{synth_dataset, SynthConfig, ToyDataset, ToyPair, ToyWorld};
pub use gradcheck::{
    check_all, finite_diff_check, relative_error, GradCheckKind, GradCheckResult, ABS_FALLBACK,
    DEFAULT_TOLERANCE,
};
pub use policy::{LogSoftmaxTable, ToyPolicy, UNCONDITIONAL};
pub use train::{
    mean_objective, preference_accuracy, train, Accuracy, HistoryRecord, Schedule, ScheduleMode,
    Stage, StageKind, TrainConfig, TrainResult,
};

use crate::dpo::DpoError;
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    InvalidConfig(String),
    #[error("{what} id {id} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        id: usize,
        limit: usize,
    },
    #[error("no pairs to evaluate")]
    Empty,
    #[error("non-finite loss in stage {stage} at epoch {epoch}")]
    NonFinite { stage: String, epoch: usize },
    #[error(transparent)]
    Dpo(#[from] DpoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything needed to reproduce one toy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyRunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleMode,
    pub learning_rate: f64,
    /// Epochs per stage; the mixed schedule uses the same count once.
    pub epochs: usize,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            schedule: ScheduleMode::MultiStage,
            learning_rate: 0.5,
            epochs: 200,
        }
    }
}

impl ToyRunConfig {
    pub fn schedule(&self) -> Schedule {
        match self.schedule {
            ScheduleMode::MultiStage => Schedule::multi_stage(self.learning_rate, self.epochs),
            ScheduleMode::OneStageMixed => Schedule::one_stage_mixed(self.learning_rate, self.epochs),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub dataset: ToyDataset,
    pub init: ToyPolicy,
    pub result: TrainResult,
    /// Trained policy against the initial policy on held-out pairs.
    pub heldout: Accuracy,
}

impl ToyRun {
    /// Mean loss at epoch 0 and at the last epoch of every stage, in order.
    pub fn stage_losses(&self) -> Vec<(String, f64, f64)> {
        let mut out: Vec<(String, f64, f64)> = Vec::new();
        for h in &self.result.history {
            match out.last_mut() {
                Some(last) if last.0 == h.stage && h.epoch > 0 => last.2 = h.mean_loss,
                _ => out.push((h.stage.clone(), h.mean_loss, h.mean_loss)),
            }
        }
        out
    }
}

/// Synthesizes the dataset, trains from a uniform policy and scores held-out pairs.
pub fn run_experiment(cfg: &ToyRunConfig) -> Result<ToyRun, ToyError> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0, 0));
    let dataset = synth_dataset(&cfg.synth, &mut rng)?;
    let init = ToyPolicy::uniform(cfg.synth.contexts, cfg.synth.vocab);
    let result = train(&init, &dataset.train, &cfg.schedule(), &cfg.train)?;
    let heldout = preference_accuracy(&result.policy, &init, &dataset.heldout, &cfg.train)?;
    Ok(ToyRun {
        dataset,
        init,
        result,
        heldout,
    })
}

#[cfg(test)]
mod tests;
