//! Experiment configuration. Every field except `dataset.name` has a default;
//! unknown keys are rejected.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::allocation::TargetShape;
use crate::pruning::{LlmOptions, ProxyKind};
use crate::schedule::{NoiseSchedule, ScheduleError};

use super::data::Dataset;
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub allocation: AllocationConfig,
    #[serde(default)]
    pub pruning: PruningConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub llm: LlmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: Dataset,
    /// Size of the fixed training set.
    #[serde(default = "DatasetConfig::default_size")]
    pub size: usize,
}

impl DatasetConfig {
    fn default_size() -> usize {
        8192
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleFamily {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleFamily,
    pub timesteps: usize,
    pub cosine_offset: f64,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleFamily::Cosine,
            timesteps: 100,
            cosine_offset: 0.008,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        match self.kind {
            ScheduleFamily::Linear => NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end),
            ScheduleFamily::Cosine => NoiseSchedule::cosine(self.timesteps, self.cosine_offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
    pub time_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64, 64],
            time_embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    pub groups: usize,
    /// Smallest FLOPs fraction, in (0, 1].
    pub k: f64,
    pub shape: TargetShape,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            groups: 5,
            k: 0.5,
            shape: TargetShape::Snr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruningConfig {
    /// `false` fine-tunes the unpruned base for every group.
    pub enabled: bool,
    pub proxy: ProxyKind,
    pub rounds: usize,
    pub candidates: usize,
    /// Held-out examples per group used to score candidates.
    pub eval_batch: usize,
    /// Examples per group used by gradient-based importance.
    pub calibration_batch: usize,
    /// Optional cap on kept FLOPs as a fraction of the full model, applied
    /// on top of the group limit. 1.0 disables it.
    pub flops_ratio: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            proxy: ProxyKind::Magnitude,
            rounds: 5,
            candidates: 3,
            eval_batch: 256,
            calibration_batch: 128,
            flops_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub stage1_steps: usize,
    /// Fine-tune steps per active group.
    pub stage2_steps: usize,
    /// Per-group steps for the single-stage baseline. Unset means matched
    /// budget: the two-stage total split evenly over the active groups.
    pub single_stage_steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub checkpoint_every: usize,
    /// Held-out examples used to report training losses.
    pub holdout: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage1_steps: 5000,
            stage2_steps: 1000,
            single_stage_steps: None,
            batch_size: 128,
            lr: 1e-3,
            finetune_lr: 1e-4,
            checkpoint_every: 1000,
            holdout: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            samples: 1000,
            seed: 1234,
        }
    }
}

/// Language-model proxy tunables. Endpoint and credentials are read from the
/// environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let d = LlmOptions::default();
        Self {
            temperature: d.temperature,
            timeout_secs: d.timeout.as_secs(),
            max_retries: d.max_retries,
        }
    }
}

impl LlmConfig {
    pub fn options(&self) -> LlmOptions {
        LlmOptions {
            temperature: self.temperature,
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
        }
    }
}

impl ExperimentConfig {
    /// A config with every default and the given dataset.
    pub fn with_dataset(name: Dataset) -> Self {
        Self {
            dataset: DatasetConfig {
                name,
                size: DatasetConfig::default_size(),
            },
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            allocation: AllocationConfig::default(),
            pruning: PruningConfig::default(),
            training: TrainingConfig::default(),
            sampling: SamplingConfig::default(),
            llm: LlmConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |key: &str, why: &str| Err(PipelineError::Config(format!("{key}: {why}")));
        if !(self.allocation.k > 0.0 && self.allocation.k <= 1.0) {
            return bad("allocation.k", &format!("{} is outside the range (0, 1]", self.allocation.k));
        }
        if self.allocation.groups == 0 {
            return bad("allocation.groups", "must be at least 1");
        }
        if self.dataset.size == 0 {
            return bad("dataset.size", "must be at least 1");
        }
        if self.schedule.timesteps == 0 {
            return bad("schedule.timesteps", "must be at least 1");
        }
        if let Err(e) = self.schedule.build() {
            return bad("schedule", &e.to_string());
        }
        if self.model.hidden_widths.is_empty() || self.model.hidden_widths.contains(&0) {
            return bad("model.hidden_widths", "needs at least one layer, all widths positive");
        }
        if self.model.time_embed_dim == 0 || self.model.time_embed_dim % 2 != 0 {
            return bad("model.time_embed_dim", "must be a positive even number");
        }
        if self.pruning.rounds == 0 || self.pruning.candidates == 0 {
            return bad("pruning.rounds", "rounds and candidates must be at least 1");
        }
        if self.pruning.eval_batch == 0 || self.pruning.calibration_batch == 0 {
            return bad("pruning.eval_batch", "batches must be at least 1");
        }
        if !(self.pruning.flops_ratio > 0.0 && self.pruning.flops_ratio <= 1.0) {
            return bad("pruning.flops_ratio", "must be in (0, 1]");
        }
        if self.training.batch_size == 0 || self.training.holdout == 0 {
            return bad("training.batch_size", "batch sizes must be at least 1");
        }
        if self.training.checkpoint_every == 0 {
            return bad("training.checkpoint_every", "must be at least 1");
        }
        if !(self.training.lr > 0.0 && self.training.finetune_lr > 0.0) {
            return bad("training.lr", "learning rates must be positive");
        }
        if self.sampling.steps == 0 || self.sampling.steps > self.schedule.timesteps {
            return bad("sampling.steps", "must be in 1..=schedule.timesteps");
        }
        if self.sampling.samples == 0 {
            return bad("sampling.samples", "must be at least 1");
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return bad("llm.temperature", "must be in [0, 2]");
        }
        Ok(())
    }
}
