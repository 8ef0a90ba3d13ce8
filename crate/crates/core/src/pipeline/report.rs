//! Run report written to `report.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::allocation::TargetShape;
use crate::pruning::RoundSummary;
use crate::sampler::{MetricReport, TrajectoryFlops};

use super::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Base training, then per-group pruning and fine-tuning.
    TwoStage,
    /// Base training, then per-group fine-tuning of the unpruned base.
    TwoStageNoPrune,
    /// One model per group trained from scratch on its timesteps.
    SingleStage,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::TwoStage => "two-stage",
            RunMode::TwoStageNoPrune => "two-stage-no-prune",
            RunMode::SingleStage => "single-stage",
        }
    }
}

/// Losses on a fixed held-out batch before and after a training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub remove: BTreeMap<usize, Vec<usize>>,
    pub best_loss: f64,
    pub best_flops: u64,
    pub rounds: Vec<RoundSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub index: usize,
    pub timesteps: String,
    pub count: usize,
    pub skipped: bool,
    pub note: Option<String>,
    /// Group upper limit `w(i)` in FLOPs.
    pub flops_limit: f64,
    /// Integer constraint handed to pruning.
    pub constraint: u64,
    pub achieved_flops: Option<u64>,
    pub hidden_widths: Option<Vec<usize>>,
    /// Base (or, for single-stage, untrained) model loss on this group's
    /// held-out batch.
    pub reference_loss: Option<f64>,
    pub prune: Option<PruneSummary>,
    pub train: Option<TrainLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLedger {
    pub stage1: usize,
    /// Steps per group; 0 for skipped groups.
    pub stage2: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub shape: TargetShape,
    pub dataset: Dataset,
    pub full_flops: u64,
    pub steps: StepLedger,
    pub base: Option<TrainLog>,
    pub groups: Vec<GroupReport>,
    pub trajectory_flops: TrajectoryFlops,
    /// `trajectory_flops.mean / full_flops`.
    pub flops_ratio: f64,
    pub metrics: MetricReport,
    pub base_metrics: Option<MetricReport>,
}

impl RunReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}  shape: {}  dataset: {}", self.mode.name(), self.shape.name(), self.dataset);
        let _ = writeln!(
            out,
            "steps: stage1 {} + stage2 {} = {}",
            self.steps.stage1,
            self.steps.stage2.iter().sum::<usize>(),
            self.steps.total
        );
        if let Some(b) = &self.base {
            let _ = writeln!(out, "base loss: {:.5} -> {:.5}", b.initial_loss, b.final_loss);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>12} {:>12} {:>12} {:>10} {:>10}  timesteps",
            "group", "count", "limit", "achieved", "widths", "ref loss", "final"
        );
        for g in &self.groups {
            if g.skipped {
                let _ = writeln!(
                    out,
                    "{:>5} {:>6} {:>12.0} {:>12} {:>12} {:>10} {:>10}  {}",
                    g.index,
                    g.count,
                    g.flops_limit,
                    "-",
                    "-",
                    "-",
                    "-",
                    g.note.as_deref().unwrap_or("skipped")
                );
                continue;
            }
            let widths = g
                .hidden_widths
                .as_ref()
                .map(|w| w.iter().map(ToString::to_string).collect::<Vec<_>>().join("/"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{:>5} {:>6} {:>12.0} {:>12} {:>12} {:>10.5} {:>10.5}  {}",
                g.index,
                g.count,
                g.flops_limit,
                g.achieved_flops.unwrap_or(0),
                widths,
                g.reference_loss.unwrap_or(f64::NAN),
                g.train.as_ref().map_or(f64::NAN, |t| t.final_loss),
                g.timesteps
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "sampling FLOPs: mean {:.1} per step over {} steps ({:.4} of full {})",
            self.trajectory_flops.mean, self.trajectory_flops.steps, self.flops_ratio, self.full_flops
        );
        let _ = writeln!(
            out,
            "energy distance {:.5}  sliced W2 {:.5}  (n = {}, seed {})",
            self.metrics.energy_distance, self.metrics.sliced_wasserstein, self.metrics.samples, self.metrics.seed
        );
        if let Some(b) = &self.base_metrics {
            let _ = writeln!(
                out,
                "base model:  energy distance {:.5}  sliced W2 {:.5}",
                b.energy_distance, b.sliced_wasserstein
            );
        }
        out
    }
}

/// Wall-clock seconds per phase. Kept out of `report.json` so that reports of
/// identical runs compare equal byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub eval_secs: f64,
    pub total_secs: f64,
}
