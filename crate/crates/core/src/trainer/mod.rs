//! Two-stage training, weight averaging and the end-to-end pipeline.

mod pipeline;
mod stages;
mod swa;

pub use pipeline::{
    aggregate_repeats, evaluate, param_counts, predict_branches, run_pipeline, run_repeats, BranchPredictions, MeanStd,
    ParamCounts, PipelineOutput, PipelineReports, PipelineWeights, RepeatRow, RepeatSummary,
};
pub use stages::{fusion_loss_on, graph_loss_on, train_fusion_stage, train_graph_stage, FusionStage, GraphStage};
pub use swa::SwaState;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cooccur::{CmMode, CooccurError};
use crate::dataset::DatasetError;
use crate::ensemble::{EnsembleError, DEFAULT_STEP};
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::nn::{component_rng, NnError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("need at least 2 training cases for batch norm, got {0}")]
    BatchUnderflow(usize),
    #[error("training split is empty")]
    EmptyTrain,
    #[error("test split is empty")]
    EmptyTest,
    #[error("freeze variant needs the stage-1 fusion model")]
    MissingFusion,
    #[error("no weight snapshots to average")]
    NoSnapshots,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Cooccur(#[from] CooccurError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// How stage 2 treats the fusion model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Stage-1 encoders feed the graph model and stay fixed.
    Freeze,
    /// A fresh fusion model trains jointly with the graph model.
    Unfreeze,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "freeze" => Ok(Variant::Freeze),
            "unfreeze" => Ok(Variant::Unfreeze),
            other => Err(format!("unknown variant `{other}` (expected freeze or unfreeze)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Freeze => "freeze",
            Variant::Unfreeze => "unfreeze",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset `{other}` (expected desk or paper)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    /// Snapshot the weights after each of the last this-many epochs; 0 disables averaging.
    pub swa_last_epochs: usize,
    pub variant: Variant,
    pub seed: u64,
    pub cm_mode: CmMode,
    pub grid_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (epochs, base_lr, swa_last_epochs) = match preset {
            Preset::Desk => (60, 3e-4, 10),
            Preset::Paper => (250, 3e-5, 50),
        };
        Self {
            epochs,
            batch_size: 32,
            base_lr,
            min_lr: 0.0,
            swa_last_epochs,
            variant: Variant::Unfreeze,
            seed: 0,
            cm_mode: CmMode::RawConditional,
            grid_step: DEFAULT_STEP,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.swa_last_epochs > self.epochs {
            return bad("swa_last_epochs must not exceed epochs");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return bad("min_lr must lie in [0, base_lr]");
        }
        crate::ensemble::weight_grid(2, self.grid_step)
            .map_err(|_| TrainError::Config(format!("grid_step {} must divide 1 evenly", self.grid_step)))?;
        Ok(())
    }
}

/// Seeded permutation of `0..n` cut into batches. A trailing batch of one
/// case joins the previous batch so batch norm always sees two rows.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    tag: &str,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if n < 2 {
        return Err(TrainError::BatchUnderflow(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut component_rng(seed, &format!("{tag}.shuffle.{epoch}")));
    Ok(chunk(order, batch_size))
}

/// Consecutive batches in the given order, with the same singleton merge.
pub(crate) fn chunk(order: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "fusion")]
    Fusion,
    #[serde(rename = "graph")]
    Graph,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches, weighted by batch size.
    pub loss: f64,
    pub wall_time_ms: u64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        let key = match self.stage {
            Stage::Fusion => "L_F",
            Stage::Graph => "L_G",
        };
        let mut m = serde_json::Map::new();
        m.insert("epoch".into(), self.epoch.into());
        m.insert("lr".into(), self.lr.into());
        m.insert(key.into(), self.loss.into());
        m.insert("wall_time_ms".into(), self.wall_time_ms.into());
        serde_json::Value::Object(m).to_string()
    }
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter().map(|l| l.to_json_line() + "\n").collect()
}
