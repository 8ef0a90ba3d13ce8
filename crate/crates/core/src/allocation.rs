//! FLOPs allocation across timesteps.
//!
//! Difficulty is read off the SNR: low-SNR (noisy) timesteps get larger
//! FLOPs targets. Targets are standardised, min-max mapped onto
//! `[k·F_max, F_max]`, and then bucketed into `N` groups whose upper limits are
//! evenly spaced between `k·F_max` and `F_max`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::NoiseSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("minimum FLOPs fraction k must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("maximum FLOPs must be positive and finite, got {0}")]
    BadMaxFlops(f64),
    #[error("group count must be at least 1")]
    NoGroups,
    #[error("group limits have mismatched lengths ({v} lower, {w} upper)")]
    LimitLengthMismatch { v: usize, w: usize },
    #[error("timestep {t} with FLOPs target {target} falls outside every group interval")]
    Unassigned { t: usize, target: f64 },
}

/// Minimum-FLOPs fraction `k` and the largest per-evaluation FLOPs `F_max`.
///
/// FLOPs count a multiply-accumulate as 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsBudget {
    pub k: f64,
    pub f_max: f64,
}

impl FlopsBudget {
    pub fn new(k: f64, f_max: f64) -> Result<Self, AllocationError> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(AllocationError::BadFraction(k));
        }
        if !(f_max > 0.0 && f_max.is_finite()) {
            return Err(AllocationError::BadMaxFlops(f_max));
        }
        Ok(Self { k, f_max })
    }

    pub fn min_flops(&self) -> f64 {
        self.k * self.f_max
    }
}

/// Per-timestep difficulty and FLOPs targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub snr_db: Vec<f64>,
    /// Standardised negative SNR.
    pub s_n: Vec<f64>,
    pub flops_target: Vec<f64>,
}

/// Shape of the per-timestep FLOPs targets.
///
/// `Snr` is the difficulty-driven mapping; the others replace it wholesale
/// for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetShape {
    #[default]
    Snr,
    Constant,
    UniIncreasing,
    UniDecreasing,
}

impl TargetShape {
    pub const ALL: [TargetShape; 4] = [
        TargetShape::Snr,
        TargetShape::Constant,
        TargetShape::UniIncreasing,
        TargetShape::UniDecreasing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TargetShape::Snr => "snr",
            TargetShape::Constant => "constant",
            TargetShape::UniIncreasing => "uni-increasing",
            TargetShape::UniDecreasing => "uni-decreasing",
        }
    }
}

impl std::str::FromStr for TargetShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TargetShape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| format!("unknown schedule shape `{s}`"))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Maps per-timestep SNR onto FLOPs targets.
///
/// `S_n = (-SNR - mean(-SNR)) / std(-SNR)` with the population standard
/// deviation, then `target = k·F + (1 - k)·(S_n - min S_n)/(max S_n - min S_n)·F`.
/// A constant SNR profile (including `T = 1`) maps every timestep to `k·F`.
pub fn difficulty_profile(schedule: &NoiseSchedule, budget: &FlopsBudget) -> DifficultyProfile {
    profile_from_snr(schedule.snr_db_all(), budget)
}

pub fn profile_from_snr(snr_db: Vec<f64>, budget: &FlopsBudget) -> DifficultyProfile {
    let neg: Vec<f64> = snr_db.iter().map(|s| -s).collect();
    let m = mean(&neg);
    let sd = population_std(&neg, m);
    let (k, f) = (budget.k, budget.f_max);
    if !(sd > 0.0) || !sd.is_finite() {
        return DifficultyProfile {
            s_n: vec![0.0; neg.len()],
            flops_target: vec![k * f; neg.len()],
            snr_db,
        };
    }
    let s_n: Vec<f64> = neg.iter().map(|x| (x - m) / sd).collect();
    let lo = s_n.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s_n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let flops_target = if span > 0.0 {
        s_n.iter()
            // The clamp only absorbs last-ulp rounding at the top end.
            .map(|s| (k * f + (1.0 - k) * ((s - lo) / span) * f).clamp(k * f, f))
            .collect()
    } else {
        vec![k * f; s_n.len()]
    };
    DifficultyProfile {
        snr_db,
        s_n,
        flops_target,
    }
}

/// Builds a profile with a fixed target shape in place of the SNR mapping.
pub fn shaped_profile(schedule: &NoiseSchedule, budget: &FlopsBudget, shape: TargetShape) -> DifficultyProfile {
    let mut profile = difficulty_profile(schedule, budget);
    let len = profile.flops_target.len();
    let (k, f) = (budget.k, budget.f_max);
    let ramp = |t: usize| {
        if len <= 1 {
            0.0
        } else {
            t as f64 / (len - 1) as f64
        }
    };
    match shape {
        TargetShape::Snr => {}
        TargetShape::Constant => profile.flops_target = vec![(1.0 + k) / 2.0 * f; len],
        TargetShape::UniIncreasing => {
            profile.flops_target = (0..len)
                .map(|t| (k * f + (1.0 - k) * ramp(t) * f).clamp(k * f, f))
                .collect()
        }
        TargetShape::UniDecreasing => {
            profile.flops_target = (0..len)
                .map(|t| (k * f + (1.0 - k) * (1.0 - ramp(t)) * f).clamp(k * f, f))
                .collect()
        }
    }
    profile
}

/// Evenly spaced group limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLimits {
    /// `(i/N + (N-i)/N·k)·F` for every `i`, before the top clamp.
    pub raw: Vec<f64>,
    /// Lower bounds: `v(0) = 0`, `v(i) = raw(i-1)`.
    pub v: Vec<f64>,
    /// Upper bounds: `raw(i)`, with the last lifted to at least `F`.
    pub w: Vec<f64>,
}

/// Per-group FLOPs limits.
///
/// The evenly spaced formula tops out at `(1 - (1-k)/N)·F`, which would leave
/// the hardest timesteps unassigned, so the last upper bound is clamped up to
/// `F`.
pub fn group_limits(groups: usize, budget: &FlopsBudget) -> Result<GroupLimits, AllocationError> {
    if groups == 0 {
        return Err(AllocationError::NoGroups);
    }
    let n = groups as f64;
    let raw: Vec<f64> = (0..groups)
        .map(|i| {
            let i = i as f64;
            (i / n + (n - i) / n * budget.k) * budget.f_max
        })
        .collect();
    let mut w = raw.clone();
    if let Some(last) = w.last_mut() {
        *last = last.max(budget.f_max);
    }
    let v = std::iter::once(0.0)
        .chain(raw.iter().copied().take(groups - 1))
        .collect();
    Ok(GroupLimits { raw, v, w })
}

/// Timestep groups with their FLOPs bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub budget: FlopsBudget,
    pub limits: GroupLimits,
    /// Sorted timesteps of each group. Groups may be empty.
    pub members: Vec<Vec<usize>>,
    pub profile: DifficultyProfile,
}

/// Assigns each timestep to the unique group `i` with `v(i) < target ≤ w(i)`.
pub fn partition_timesteps(
    profile: &DifficultyProfile,
    limits: &GroupLimits,
    budget: &FlopsBudget,
) -> Result<GroupPlan, AllocationError> {
    if limits.v.len() != limits.w.len() {
        return Err(AllocationError::LimitLengthMismatch {
            v: limits.v.len(),
            w: limits.w.len(),
        });
    }
    if limits.w.is_empty() {
        return Err(AllocationError::NoGroups);
    }
    let mut members = vec![Vec::new(); limits.w.len()];
    for (t, &target) in profile.flops_target.iter().enumerate() {
        let group = limits
            .v
            .iter()
            .zip(&limits.w)
            .position(|(&lo, &hi)| lo < target && target <= hi)
            .ok_or(AllocationError::Unassigned { t, target })?;
        members[group].push(t);
    }
    Ok(GroupPlan {
        budget: *budget,
        limits: limits.clone(),
        members,
        profile: profile.clone(),
    })
}

impl GroupPlan {
    /// Difficulty profile, limits and partition in one call.
    pub fn build(
        schedule: &NoiseSchedule,
        budget: &FlopsBudget,
        groups: usize,
        shape: TargetShape,
    ) -> Result<Self, AllocationError> {
        let profile = shaped_profile(schedule, budget, shape);
        let limits = group_limits(groups, budget)?;
        partition_timesteps(&profile, &limits, budget)
    }

    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn num_timesteps(&self) -> usize {
        self.profile.flops_target.len()
    }

    /// Group index owning each timestep.
    pub fn group_of(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.num_timesteps()];
        for (g, ts) in self.members.iter().enumerate() {
            for &t in ts {
                owner[t] = g;
            }
        }
        owner
    }

    pub fn active_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(i, _)| i)
    }

    /// Human-readable plan listing limits, ranges and per-timestep targets.
    pub fn to_plan_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# timestep group plan");
        let _ = writeln!(out, "groups = {}", self.num_groups());
        let _ = writeln!(out, "timesteps = {}", self.num_timesteps());
        let _ = writeln!(out, "k = {}", self.budget.k);
        let _ = writeln!(out, "f_max = {}", self.budget.f_max);
        let _ = writeln!(out);
        for (i, ts) in self.members.iter().enumerate() {
            let _ = writeln!(
                out,
                "group {i}: v = {:.3} w = {:.3} (raw {:.3}) count = {} timesteps = {}",
                self.limits.v[i],
                self.limits.w[i],
                self.limits.raw[i],
                ts.len(),
                format_ranges(ts)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "# t snr_db s_n flops_target");
        for t in 0..self.num_timesteps() {
            let _ = writeln!(
                out,
                "{t} {:.6} {:.6} {:.3}",
                self.profile.snr_db[t], self.profile.s_n[t], self.profile.flops_target[t]
            );
        }
        out
    }
}

/// Formats sorted indices as `0-3,7,9-12`; empty input gives `none`.
pub fn format_ranges(sorted: &[usize]) -> String {
    if sorted.is_empty() {
        return "none".to_string();
    }
    let mut parts = Vec::new();
    let mut start = sorted[0];
    let mut prev = sorted[0];
    for &t in &sorted[1..] {
        if t != prev + 1 {
            parts.push(range_text(start, prev));
            start = t;
        }
        prev = t;
    }
    parts.push(range_text(start, prev));
    parts.join(",")
}

fn range_text(a: usize, b: usize) -> String {
    if a == b {
        a.to_string()
    } else {
        format!("{a}-{b}")
    }
}
