//! Timestep-grouped diffusion training at desk scale.
//!
//! The crate splits the diffusion chain into groups of timesteps ranked by
//! signal-to-noise ratio, assigns each group a FLOPs budget, trains one base
//! denoiser over every timestep, then prunes and fine-tunes a specialised copy
//! per group. Sampling routes each timestep to the model of its group.
//!
//! Module map:
//! - [`schedule`]: noise schedules, forward diffusion, per-timestep SNR.
//! - [`allocation`]: SNR to FLOPs targets, group limits, timestep partition.
//! - [`denoiser`]: prunable MLP noise predictor with hand-written gradients.
//! - [`pruning`]: importance proxies, memory bank, iterative candidate loop.
//! - [`pipeline`]: base training, per-group specialisation, baselines.
//! - [`sampler`]: grouped DDIM sampling, FLOPs accounting, sample metrics.
//! - [`cli`]: command-line entry point and experiment directories.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results are
//! bitwise identical either way.

pub mod allocation;
pub mod cli;
pub mod denoiser;
pub mod par;
pub mod pipeline;
pub mod pruning;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use allocation::{DifficultyProfile, FlopsBudget, GroupPlan};
pub use denoiser::{DenoiserSpec, Parameters, PruneMask};
pub use schedule::NoiseSchedule;
