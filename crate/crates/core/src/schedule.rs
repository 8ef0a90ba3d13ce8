//! Discrete-time noise schedules and the forward diffusion process.
//!
//! Timesteps are 0-indexed: `t = 0` is the least noisy step (closest to the
//! data) and `t = T - 1` the noisiest. All schedule arithmetic is `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest beta the cosine schedule may imply.
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("timestep count must be positive")]
    EmptySchedule,
    #[error("beta {value} at index {index} is outside (0, 1)")]
    BetaOutOfRange { index: usize, value: f64 },
    #[error("beta_start {start} exceeds beta_end {end}")]
    BetaOrder { start: f64, end: f64 },
    #[error("cosine offset must be positive and finite, got {0}")]
    BadOffset(f64),
    #[error("timestep {t} out of range for T = {len}")]
    TimestepOutOfRange { t: usize, len: usize },
    #[error("dimension mismatch: x0 has {x0}, eps has {eps}")]
    DimensionMismatch { x0: usize, eps: usize },
}

/// Which schedule family to build, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear { beta_start: f64, beta_end: f64 },
    Cosine { offset: f64 },
}

impl ScheduleKind {
    pub fn build(&self, timesteps: usize) -> Result<NoiseSchedule, ScheduleError> {
        match *self {
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => NoiseSchedule::linear(timesteps, beta_start, beta_end),
            ScheduleKind::Cosine { offset } => NoiseSchedule::cosine(timesteps, offset),
        }
    }
}

/// Per-timestep betas and their cumulative products `alpha_bar`.
///
/// Immutable once built; `alpha_bars` is always recomputed from `betas`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, each strictly inside (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::EmptySchedule);
        }
        for (index, &value) in betas.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(ScheduleError::BetaOutOfRange { index, value });
            }
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Betas interpolated linearly from `beta_start` to `beta_end` inclusive.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if timesteps == 0 {
            return Err(ScheduleError::EmptySchedule);
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(ScheduleError::BetaOutOfRange {
                index: 0,
                value: beta_start,
            });
        }
        if !(beta_end > 0.0 && beta_end < 1.0) {
            return Err(ScheduleError::BetaOutOfRange {
                index: timesteps - 1,
                value: beta_end,
            });
        }
        if beta_start > beta_end {
            return Err(ScheduleError::BetaOrder {
                start: beta_start,
                end: beta_end,
            });
        }
        let betas = if timesteps == 1 {
            vec![beta_start]
        } else {
            let span = (timesteps - 1) as f64;
            (0..timesteps)
                .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Squared-cosine schedule.
    ///
    /// `alpha_bar[t] = g(t + 1) / g(0)` with
    /// `g(u) = cos²(((u / T) + offset) / (1 + offset) · π/2)`; the implied
    /// betas are clamped to [`COSINE_MAX_BETA`] and `alpha_bar` is rebuilt
    /// from the clamped betas.
    pub fn cosine(timesteps: usize, offset: f64) -> Result<Self, ScheduleError> {
        if timesteps == 0 {
            return Err(ScheduleError::EmptySchedule);
        }
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(ScheduleError::BadOffset(offset));
        }
        let t_total = timesteps as f64;
        let g = |u: f64| {
            let c = ((u / t_total + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos();
            c * c
        };
        let g0 = g(0.0);
        let betas = (0..timesteps)
            .map(|i| {
                let prev = g(i as f64) / g0;
                let next = g((i + 1) as f64) / g0;
                (1.0 - next / prev).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA)
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, ScheduleError> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(ScheduleError::TimestepOutOfRange { t, len: self.len() })
    }

    /// `sqrt(alpha_bar_t) · x0 + sqrt(1 - alpha_bar_t) · eps`.
    pub fn forward_diffuse(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, ScheduleError> {
        if x0.len() != eps.len() {
            return Err(ScheduleError::DimensionMismatch {
                x0: x0.len(),
                eps: eps.len(),
            });
        }
        let ab = self.alpha_bar(t)?;
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(x, e)| signal * x + noise * e)
            .collect())
    }

    /// Signal-to-noise ratio in decibels, `10·log10(alpha_bar / (1 - alpha_bar))`.
    pub fn snr_db(&self, t: usize) -> Result<f64, ScheduleError> {
        let ab = self.alpha_bar(t)?;
        Ok(10.0 * (ab / (1.0 - ab)).log10())
    }

    /// SNR for every timestep.
    pub fn snr_db_all(&self) -> Vec<f64> {
        self.alpha_bars
            .iter()
            .map(|ab| 10.0 * (ab / (1.0 - ab)).log10())
            .collect()
    }
}
