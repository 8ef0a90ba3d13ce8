//! Grouped deterministic DDIM sampling, FLOPs accounting and sample metrics.

mod metrics;

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::GroupPlan;
use crate::denoiser::{count_flops, DenoiserError, EpsModel, Parameters};
use crate::par;
use crate::pipeline::data::Dataset;
use crate::rng::rng_for;
use crate::schedule::NoiseSchedule;

pub use metrics::{energy_distance, sliced_wasserstein, SW_PROJECTIONS};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampler steps must be in 1..={timesteps}, got {steps}")]
    BadSteps { steps: usize, timesteps: usize },
    #[error("model bank covers {bank} timesteps but the schedule has {schedule}")]
    LengthMismatch { bank: usize, schedule: usize },
    #[error("group {group} model expects input dimension {got}, bank uses {expected}")]
    DimensionMismatch { group: usize, expected: usize, got: usize },
    #[error("bank has {models} group models for {groups} groups")]
    GroupCount { models: usize, groups: usize },
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error("writing {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One model per timestep group, with a fallback for empty groups.
#[derive(Debug, Clone)]
pub struct ModelBank {
    models: Vec<Parameters>,
    /// Index into `models` for every original timestep.
    route: Vec<usize>,
}

impl ModelBank {
    /// Every timestep handled by `model`.
    pub fn single(model: Parameters, timesteps: usize) -> Self {
        Self {
            models: vec![model],
            route: vec![0; timesteps],
        }
    }

    /// `group_models[i]` serves group `i`; `None` entries and empty groups
    /// resolve to `fallback`.
    pub fn from_plan(
        plan: &GroupPlan,
        group_models: Vec<Option<Parameters>>,
        fallback: Parameters,
    ) -> Result<Self, SamplerError> {
        if group_models.len() != plan.num_groups() {
            return Err(SamplerError::GroupCount {
                models: group_models.len(),
                groups: plan.num_groups(),
            });
        }
        let dim = fallback.spec().input_dim;
        let mut models = vec![fallback];
        let mut slot = Vec::with_capacity(group_models.len());
        for (g, m) in group_models.into_iter().enumerate() {
            match m {
                Some(m) => {
                    if m.spec().input_dim != dim {
                        return Err(SamplerError::DimensionMismatch {
                            group: g,
                            expected: dim,
                            got: m.spec().input_dim,
                        });
                    }
                    slot.push(models.len());
                    models.push(m);
                }
                None => slot.push(0),
            }
        }
        let route = plan.group_of().into_iter().map(|g| slot[g]).collect();
        Ok(Self { models, route })
    }

    pub fn num_timesteps(&self) -> usize {
        self.route.len()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].spec().input_dim
    }

    /// The model serving original timestep `t`.
    pub fn model_for(&self, t: usize) -> &Parameters {
        &self.models[self.route[t]]
    }
}

impl EpsModel for ModelBank {
    fn predict_eps(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        self.model_for(t).predict_eps(x_t, t)
    }
}

/// Evenly strided visited timesteps, strictly descending, ending at 0 when
/// `steps > 1`.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>, SamplerError> {
    if steps == 0 || steps > timesteps {
        return Err(SamplerError::BadSteps { steps, timesteps });
    }
    if steps == 1 {
        return Ok(vec![timesteps - 1]);
    }
    let stride = (timesteps - 1) as f64 / (steps - 1) as f64;
    Ok((0..steps).rev().map(|j| (j as f64 * stride).round() as usize).collect())
}

/// Runs the η = 0 DDIM recursion from `x` over `visited` and returns the
/// final clean estimate. `trace` receives every intermediate estimate.
pub fn ddim_trajectory<M: EpsModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    visited: &[usize],
    mut x: Vec<f64>,
    mut trace: impl FnMut(usize, &[f64]),
) -> Vec<f64> {
    let ab = schedule.alpha_bars();
    let mut x0_hat = x.clone();
    for (j, &t) in visited.iter().enumerate() {
        let eps = model.predict_eps(&x, t);
        let (sa, sn) = (ab[t].sqrt(), (1.0 - ab[t]).sqrt());
        x0_hat = x.iter().zip(&eps).map(|(xt, e)| (xt - sn * e) / sa).collect();
        trace(t, &x0_hat);
        if let Some(&prev) = visited.get(j + 1) {
            let (pa, pn) = (ab[prev].sqrt(), (1.0 - ab[prev]).sqrt());
            x = x0_hat.iter().zip(&eps).map(|(x0, e)| pa * x0 + pn * e).collect();
        }
    }
    x0_hat
}

/// `n` samples of dimension `dim` drawn with `steps` DDIM steps. Sample `i`
/// starts from its own seeded normal draw, so output does not depend on
/// thread count.
pub fn ddim_sample<M: EpsModel + ?Sized>(
    model: &M,
    dim: usize,
    schedule: &NoiseSchedule,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    let visited = ddim_timesteps(schedule.len(), steps)?;
    Ok(par::map_range(n, |i| {
        let mut rng = rng_for(seed, "ddim", i as u64);
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        ddim_trajectory(model, schedule, &visited, x, |_, _| {})
    }))
}

/// Grouped sampling over a [`ModelBank`].
pub fn ddim_sample_bank(
    bank: &ModelBank,
    schedule: &NoiseSchedule,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    if bank.num_timesteps() != schedule.len() {
        return Err(SamplerError::LengthMismatch {
            bank: bank.num_timesteps(),
            schedule: schedule.len(),
        });
    }
    ddim_sample(bank, bank.input_dim(), schedule, steps, n, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFlops {
    /// FLOPs of one sample's full trajectory.
    pub total: u64,
    /// `total / steps`.
    pub mean: f64,
    pub steps: usize,
}

/// FLOPs spent per sample when visiting `steps` strided timesteps.
pub fn trajectory_flops(bank: &ModelBank, steps: usize) -> Result<TrajectoryFlops, SamplerError> {
    let visited = ddim_timesteps(bank.num_timesteps(), steps)?;
    let mut total = 0u64;
    for t in visited {
        total += count_flops(bank.model_for(t).spec(), None)?;
    }
    Ok(TrajectoryFlops {
        total,
        mean: total as f64 / steps as f64,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub energy_distance: f64,
    pub sliced_wasserstein: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Sampling and reference-draw settings for [`evaluate_run`].
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub dataset: Dataset,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Compares `n` generated samples against `n` fresh reference draws.
pub fn evaluate_run(
    bank: &ModelBank,
    schedule: &NoiseSchedule,
    settings: &EvalSettings,
) -> Result<(MetricReport, Vec<Vec<f64>>), SamplerError> {
    let generated = ddim_sample_bank(bank, schedule, settings.steps, settings.samples, settings.seed)?;
    let reference = settings.dataset.sample(settings.samples, settings.seed, u64::MAX);
    let report = MetricReport {
        energy_distance: energy_distance(&generated, &reference),
        sliced_wasserstein: sliced_wasserstein(&generated, &reference, settings.seed),
        samples: settings.samples,
        seed: settings.seed,
    };
    Ok((report, generated))
}

/// One row per sample, columns `x0, x1, ...`.
pub fn write_samples_csv(path: &Path, samples: &[Vec<f64>]) -> Result<(), SamplerError> {
    let csv_err = |source| SamplerError::Csv {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| SamplerError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let dim = samples.first().map_or(0, Vec::len);
    w.write_record((0..dim).map(|d| format!("x{d}"))).map_err(csv_err)?;
    for s in samples {
        w.write_record(s.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|source| SamplerError::Io {
        path: path.display().to_string(),
        source,
    })
}
