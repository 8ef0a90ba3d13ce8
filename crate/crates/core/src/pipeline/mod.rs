//! Two-stage training. Stage 1 trains one base denoiser over every timestep;
//! stage 2 prunes a copy of it for each timestep group down to the group's
//! FLOPs limit and fine-tunes it on that group only. The single-stage
//! baseline and the FLOPs-shape ablation live here too.
//!
//! Runs are resumable: each finished piece of work leaves a `result.json`
//! next to its checkpoint, and re-running skips it.

pub mod config;
pub mod data;
mod experiment;
mod report;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::allocation::{format_ranges, AllocationError, FlopsBudget, GroupPlan, TargetShape};
use crate::denoiser::{
    apply_mask, count_flops, flops_for_widths, load_checkpoint, loss, loss_and_grad, save_checkpoint, AdamConfig, AdamState,
    CheckpointError, DenoiserError, DenoiserSpec, Example, Parameters, PruneMask,
};
use crate::par;
use crate::pruning::{
    iterative_prune, make_proxy, GroupDescriptor, MemoryBank, PruneContext, PruneError, PruneSettings,
};
use crate::rng::{derive_seed, rng_for, Rng};
use crate::sampler::{evaluate_run, trajectory_flops, write_samples_csv, EvalSettings, ModelBank, SamplerError};
use crate::schedule::{NoiseSchedule, ScheduleError};

pub use config::ExperimentConfig;
pub use data::Dataset;
pub use experiment::{read_json, write_atomic, write_json, DirLock, Experiment, CONFIG_COPY, LOCK_FILE};
pub use report::{GroupReport, PruneSummary, RunMode, RunReport, StepLedger, Timing, TrainLog};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("non-finite loss in {stage} at step {step} (batch seed {batch_seed})")]
    NonFinite { stage: String, step: usize, batch_seed: u64 },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is locked by another process")]
    Locked(std::path::PathBuf),
    #[error("json: {0}")]
    Json(String),
    #[error("missing {0}")]
    Missing(String),
}

/// Progress sink shared by parallel group workers.
pub type Log<'a> = &'a (dyn Fn(&str) + Sync);

/// Everything derived from a config before any training happens.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub spec: DenoiserSpec,
    pub full_flops: u64,
    pub plan: GroupPlan,
    pub train_set: Vec<Vec<f64>>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let spec = DenoiserSpec::new(
            cfg.dataset.name.dim(),
            cfg.model.hidden_widths.clone(),
            cfg.model.time_embed_dim,
        )?;
        let full_flops = count_flops(&spec, None)?;
        let budget = FlopsBudget::new(cfg.allocation.k, full_flops as f64)?;
        let plan = GroupPlan::build(&schedule, &budget, cfg.allocation.groups, cfg.allocation.shape)?;
        let train_set = cfg.dataset.name.sample(cfg.dataset.size, cfg.training.seed, 0);
        Ok(Self {
            cfg: cfg.clone(),
            schedule,
            spec,
            full_flops,
            plan,
            train_set,
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.training.seed
    }

    pub fn all_timesteps(&self) -> Vec<usize> {
        (0..self.schedule.len()).collect()
    }

    fn noise(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.spec.input_dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn training_batch(&self, timesteps: &[usize], n: usize, rng: &mut Rng) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let x0 = self.train_set[rng.gen_range(0..self.train_set.len())].clone();
                let t = timesteps[rng.gen_range(0..timesteps.len())];
                Example {
                    x0,
                    t,
                    eps: self.noise(rng),
                }
            })
            .collect()
    }

    /// A fixed batch of fresh generator draws with timesteps uniform over
    /// `timesteps`, identified by `(tag, index)`.
    pub fn heldout(&self, timesteps: &[usize], n: usize, tag: &str, index: u64) -> Vec<Example> {
        let seed = derive_seed(self.seed(), tag, index);
        let mut rng = rng_for(seed, "heldout-noise", 0);
        self.cfg
            .dataset
            .name
            .sample(n, seed, 1)
            .into_iter()
            .map(|x0| {
                let t = timesteps[rng.gen_range(0..timesteps.len())];
                Example {
                    x0,
                    t,
                    eps: self.noise(&mut rng),
                }
            })
            .collect()
    }

    /// Held-out batch on which group `i` is pruned and judged.
    pub fn group_eval_batch(&self, i: usize) -> Vec<Example> {
        self.heldout(&self.plan.members[i], self.cfg.pruning.eval_batch, "group-eval", i as u64)
    }

    /// The integer FLOPs constraint for group `i`: `min(w(i), F)`, further
    /// capped by `pruning.flops_ratio`.
    pub fn group_constraint(&self, i: usize) -> u64 {
        let full = self.full_flops as f64;
        self.plan.limits.w[i]
            .min(full)
            .min(self.cfg.pruning.flops_ratio * full)
            .floor() as u64
    }

    pub fn group_descriptor(&self, i: usize) -> GroupDescriptor {
        let members = &self.plan.members[i];
        let snr = members.iter().map(|&t| self.plan.profile.snr_db[t]);
        GroupDescriptor {
            index: i,
            timesteps: format_ranges(members),
            count: members.len(),
            snr_min: snr.clone().fold(f64::INFINITY, f64::min),
            snr_max: snr.fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn settings_digest(&self) -> String {
        let c = &self.cfg;
        format!(
            "dataset={} (2-D toy, {} points); schedule={:?} T={}; groups={} k={}; fine-tune {} steps at lr {} on group timesteps only; loss = noise-prediction MSE",
            c.dataset.name,
            c.dataset.size,
            c.schedule.kind,
            c.schedule.timesteps,
            c.allocation.groups,
            c.allocation.k,
            c.training.stage2_steps,
            c.training.finetune_lr
        )
    }
}

/// One training run on a timestep subset.
pub struct TrainJob<'a> {
    pub tag: &'a str,
    pub index: u64,
    pub timesteps: &'a [usize],
    pub steps: usize,
    pub lr: f64,
    pub heldout: &'a [Example],
    /// Written every `training.checkpoint_every` steps.
    pub checkpoint: Option<&'a Path>,
}

/// Adam on fresh minibatches; losses are reported on `job.heldout`.
pub fn train(setup: &Setup, params: &mut Parameters, job: &TrainJob<'_>, log: Log<'_>) -> Result<TrainLog, PipelineError> {
    let initial_loss = loss(params, job.heldout, &setup.schedule)?;
    let stream = derive_seed(setup.seed(), job.tag, job.index);
    let mut adam = AdamState::new(params);
    let adam_cfg = AdamConfig::with_lr(job.lr);
    let every = setup.cfg.training.checkpoint_every;
    for step in 0..job.steps {
        let mut rng = rng_for(stream, "step", step as u64);
        let batch = setup.training_batch(job.timesteps, setup.cfg.training.batch_size, &mut rng);
        let (l, g) = loss_and_grad(params, &batch, &setup.schedule)?;
        if !l.is_finite() {
            return Err(PipelineError::NonFinite {
                stage: format!("{} {}", job.tag, job.index),
                step,
                batch_seed: derive_seed(stream, "step", step as u64),
            });
        }
        adam.step(params, &g, &adam_cfg);
        if (step + 1) % every == 0 {
            log(&format!("{} {}: step {}/{} batch loss {l:.5}", job.tag, job.index, step + 1, job.steps));
            if let Some(path) = job.checkpoint {
                save_checkpoint(params, path)?;
            }
        }
    }
    let final_loss = loss(params, job.heldout, &setup.schedule)?;
    Ok(TrainLog {
        steps: job.steps,
        initial_loss,
        final_loss,
    })
}

/// Stage 1: the full architecture trained on every timestep.
pub fn train_base(setup: &Setup, checkpoint: Option<&Path>, log: Log<'_>) -> Result<(Parameters, TrainLog), PipelineError> {
    let mut params = Parameters::init(&setup.spec, derive_seed(setup.seed(), "init", 0))?;
    let all = setup.all_timesteps();
    let heldout = setup.heldout(&all, setup.cfg.training.holdout, "heldout-stage1", 0);
    let job = TrainJob {
        tag: "stage1",
        index: 0,
        timesteps: &all,
        steps: setup.cfg.training.stage1_steps,
        lr: setup.cfg.training.lr,
        heldout: &heldout,
        checkpoint,
    };
    let tl = train(setup, &mut params, &job, log)?;
    if let Some(path) = checkpoint {
        save_checkpoint(&params, path)?;
    }
    Ok((params, tl))
}

/// Runs the proxy loop for group `i` against `base`. With `dir`, the memory
/// bank and LLM prompts are written there (any previous bank is discarded).
pub fn prune_group(
    setup: &Setup,
    base: &Parameters,
    i: usize,
    dir: Option<&Path>,
    log: Log<'_>,
) -> Result<PruneSummary, PipelineError> {
    let members = &setup.plan.members[i];
    let pc = &setup.cfg.pruning;
    let calibration = setup.heldout(members, pc.calibration_batch, "calibration", i as u64);
    let eval = setup.group_eval_batch(i);
    let mut bank = match dir {
        Some(d) => {
            let path = d.join("bank.jsonl");
            if path.exists() {
                fs::remove_file(&path).map_err(experiment::io_err(&path))?;
            }
            let prompts = d.join("prompts");
            if prompts.exists() {
                fs::remove_dir_all(&prompts).map_err(experiment::io_err(&prompts))?;
            }
            MemoryBank::open(&path)?
        }
        None => MemoryBank::in_memory(),
    };
    let mut proxy = make_proxy(
        pc.proxy,
        derive_seed(setup.seed(), "proxy", i as u64),
        &setup.cfg.llm.options(),
        dir.map(|d| d.join("prompts")),
    );
    let ctx = PruneContext {
        params: base,
        schedule: &setup.schedule,
        calibration: &calibration,
    };
    let settings = PruneSettings {
        rounds: pc.rounds,
        candidates: pc.candidates,
        flops_limit: setup.group_constraint(i),
        group: setup.group_descriptor(i),
        settings: setup.settings_digest(),
    };
    let outcome = iterative_prune(&ctx, &eval, proxy.as_mut(), &settings, &mut bank)?;
    for r in &outcome.rounds {
        if let Some(why) = &r.fallback {
            log(&format!("group {i} round {}: proxy failed ({why}); used magnitude", r.round));
        }
        for why in &r.rejected {
            log(&format!("group {i} round {}: candidate rejected: {why}", r.round));
        }
    }
    log(&format!(
        "group {i}: best pruned loss {:.5} at {} FLOPs (limit {})",
        outcome.best_loss,
        outcome.best_flops,
        settings.flops_limit
    ));
    Ok(PruneSummary {
        remove: outcome.best.remove,
        best_loss: outcome.best_loss,
        best_flops: outcome.best_flops,
        rounds: outcome.rounds,
    })
}

/// Applies the pruning result (if any) to `base` and fine-tunes on group `i`.
pub fn finetune_group(
    setup: &Setup,
    base: &Parameters,
    i: usize,
    prune: Option<&PruneSummary>,
    log: Log<'_>,
) -> Result<(Parameters, TrainLog), PipelineError> {
    let mut model = match prune {
        Some(p) => apply_mask(base, &PruneMask::from_removals(base.spec(), &p.remove)?)?,
        None => base.clone(),
    };
    let eval = setup.group_eval_batch(i);
    let job = TrainJob {
        tag: "stage2",
        index: i as u64,
        timesteps: &setup.plan.members[i],
        steps: setup.cfg.training.stage2_steps,
        lr: setup.cfg.training.finetune_lr,
        heldout: &eval,
        checkpoint: None,
    };
    let tl = train(setup, &mut model, &job, log)?;
    Ok((model, tl))
}

fn skipped_report(setup: &Setup, i: usize) -> GroupReport {
    GroupReport {
        index: i,
        timesteps: format_ranges(&setup.plan.members[i]),
        count: 0,
        skipped: true,
        note: Some("empty group, no timesteps assigned".into()),
        flops_limit: setup.plan.limits.w[i],
        constraint: setup.group_constraint(i),
        achieved_flops: None,
        hidden_widths: None,
        reference_loss: None,
        prune: None,
        train: None,
    }
}

/// Loads a finished group from `dir`, if there is one.
fn load_group(dir: &Path) -> Result<Option<(Option<Parameters>, GroupReport)>, PipelineError> {
    let result = dir.join("result.json");
    if !result.exists() {
        return Ok(None);
    }
    let report: GroupReport = read_json(&result)?;
    let model = if report.skipped {
        None
    } else {
        Some(load_checkpoint(&dir.join("ckpt.bin"))?.0)
    };
    Ok(Some((model, report)))
}

fn store_group(dir: &Path, model: Option<&Parameters>, report: &GroupReport) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(experiment::io_err(dir))?;
    if let Some(m) = model {
        save_checkpoint(m, &dir.join("ckpt.bin"))?;
    }
    write_json(&dir.join("result.json"), report)
}

/// Stage 2 for one group: prune under `min(w(i), F)`, then fine-tune on the
/// group's timesteps. Empty groups are skipped. With `dir`, finished work is
/// persisted and reused on the next call.
pub fn specialize_group(
    setup: &Setup,
    base: &Parameters,
    i: usize,
    dir: Option<&Path>,
    log: Log<'_>,
) -> Result<(Option<Parameters>, GroupReport), PipelineError> {
    if let Some(done) = dir.map(load_group).transpose()?.flatten() {
        log(&format!("group {i}: already complete, reusing"));
        return Ok(done);
    }
    if setup.plan.members[i].is_empty() {
        let report = skipped_report(setup, i);
        log(&format!("group {i}: skipped (empty)"));
        if let Some(d) = dir {
            store_group(d, None, &report)?;
        }
        return Ok((None, report));
    }
    let eval = setup.group_eval_batch(i);
    let reference_loss = loss(base, &eval, &setup.schedule)?;
    let prune = if setup.cfg.pruning.enabled {
        let cached = dir.map(|d| d.join("scheme.json")).filter(|p| p.exists());
        Some(match cached {
            Some(path) => read_json(&path)?,
            None => {
                let summary = prune_group(setup, base, i, dir, log)?;
                if let Some(d) = dir {
                    write_json(&d.join("scheme.json"), &summary)?;
                }
                summary
            }
        })
    } else {
        None
    };
    let (model, tl) = finetune_group(setup, base, i, prune.as_ref(), log)?;
    let report = GroupReport {
        index: i,
        timesteps: format_ranges(&setup.plan.members[i]),
        count: setup.plan.members[i].len(),
        skipped: false,
        note: None,
        flops_limit: setup.plan.limits.w[i],
        constraint: setup.group_constraint(i),
        achieved_flops: Some(count_flops(model.spec(), None)?),
        hidden_widths: Some(model.spec().hidden_widths.clone()),
        reference_loss: Some(reference_loss),
        prune,
        train: Some(tl),
    };
    log(&format!(
        "group {i}: fine-tuned loss {:.5} -> {:.5}, {} FLOPs",
        reference_loss,
        report.train.as_ref().map_or(f64::NAN, |t| t.final_loss),
        report.achieved_flops.unwrap_or(0)
    ));
    if let Some(d) = dir {
        store_group(d, Some(&model), &report)?;
    }
    Ok((Some(model), report))
}

/// The model bank of a finished (or partially finished) run in `exp`.
/// Groups without a stored model fall back to the base model.
pub fn load_model_bank(exp: &Experiment, setup: &Setup) -> Result<ModelBank, PipelineError> {
    let base_ckpt = exp.base_dir().join("ckpt.bin");
    let base = if base_ckpt.exists() {
        Some(load_checkpoint(&base_ckpt)?.0)
    } else {
        None
    };
    let mut models = Vec::with_capacity(setup.plan.num_groups());
    for i in 0..setup.plan.num_groups() {
        models.push(load_group(&exp.group_dir(i))?.and_then(|(m, _)| m));
    }
    let fallback = base
        .or_else(|| models.iter().flatten().next().cloned())
        .ok_or_else(|| PipelineError::Missing(format!("trained models under {}", exp.dir.display())))?;
    Ok(ModelBank::from_plan(&setup.plan, models, fallback)?)
}

/// Sampling metrics, FLOPs accounting and report files for a finished run.
fn finish_run(
    exp: &Experiment,
    setup: &Setup,
    mode: RunMode,
    base: Option<(&Parameters, &TrainLog)>,
    models: Vec<Option<Parameters>>,
    groups: Vec<GroupReport>,
    mut timing: Timing,
    started: Instant,
) -> Result<(RunReport, Timing), PipelineError> {
    let t0 = Instant::now();
    let fallback = match base {
        Some((b, _)) => b.clone(),
        None => models
            .iter()
            .flatten()
            .next()
            .cloned()
            .ok_or_else(|| PipelineError::Missing("a trained group model".into()))?,
    };
    let bank = ModelBank::from_plan(&setup.plan, models, fallback)?;
    let sc = &setup.cfg.sampling;
    let settings = EvalSettings {
        dataset: setup.cfg.dataset.name,
        steps: sc.steps,
        samples: sc.samples,
        seed: sc.seed,
    };
    let tf = trajectory_flops(&bank, sc.steps)?;
    let (metrics, samples) = evaluate_run(&bank, &setup.schedule, &settings)?;
    write_samples_csv(&exp.dir.join("samples.csv"), &samples)?;
    let base_metrics = match base {
        Some((b, _)) => Some(evaluate_run(&ModelBank::single(b.clone(), setup.schedule.len()), &setup.schedule, &settings)?.0),
        None => None,
    };
    let stage1 = base.map_or(0, |(_, tl)| tl.steps);
    let stage2: Vec<usize> = groups.iter().map(|g| g.train.as_ref().map_or(0, |t| t.steps)).collect();
    let report = RunReport {
        mode,
        shape: setup.cfg.allocation.shape,
        dataset: setup.cfg.dataset.name,
        full_flops: setup.full_flops,
        steps: StepLedger {
            stage1,
            total: stage1 + stage2.iter().sum::<usize>(),
            stage2,
        },
        base: base.map(|(_, tl)| tl.clone()),
        groups,
        flops_ratio: tf.mean / setup.full_flops as f64,
        trajectory_flops: tf,
        metrics,
        base_metrics,
    };
    write_json(&exp.report_path(), &report)?;
    timing.eval_secs = t0.elapsed().as_secs_f64();
    timing.total_secs = started.elapsed().as_secs_f64();
    write_json(&exp.dir.join("timing.json"), &timing)?;
    exp.log(&format!(
        "{} run finished: FLOPs ratio {:.4}, energy distance {:.5}",
        mode.name(),
        report.flops_ratio,
        report.metrics.energy_distance
    ));
    Ok((report, timing))
}

fn write_plan(exp: &Experiment, setup: &Setup) -> Result<(), PipelineError> {
    write_atomic(&exp.dir.join("plan.txt"), setup.plan.to_plan_text().as_bytes())
}

/// Loads the stage-1 result from the experiment, training it if absent.
pub fn ensure_base(exp: &Experiment, setup: &Setup) -> Result<(Parameters, TrainLog), PipelineError> {
    let dir = exp.base_dir();
    let result = dir.join("result.json");
    let ckpt = dir.join("ckpt.bin");
    if result.exists() && ckpt.exists() {
        exp.log("stage 1: already complete, reusing");
        let (p, _) = load_checkpoint(&ckpt)?;
        return Ok((p, read_json(&result)?));
    }
    fs::create_dir_all(&dir).map_err(experiment::io_err(&dir))?;
    exp.log(&format!("stage 1: {} steps", setup.cfg.training.stage1_steps));
    let log = |m: &str| exp.log(m);
    let (p, tl) = train_base(setup, Some(&ckpt), &log)?;
    write_json(&result, &tl)?;
    exp.log(&format!("stage 1: held-out loss {:.5} -> {:.5}", tl.initial_loss, tl.final_loss));
    Ok((p, tl))
}

/// Full two-stage run in `exp`, resuming whatever is already finished.
/// `pruning.enabled = false` gives the no-pruning variant.
pub fn tdc_train(exp: &Experiment) -> Result<(RunReport, Timing), PipelineError> {
    let started = Instant::now();
    let setup = Setup::new(&exp.cfg)?;
    write_plan(exp, &setup)?;
    let mut timing = Timing::default();
    let (base, base_log) = ensure_base(exp, &setup)?;
    timing.stage1_secs = started.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let log = |m: &str| exp.log(m);
    let results = par::map_range(setup.plan.num_groups(), |i| {
        specialize_group(&setup, &base, i, Some(&exp.group_dir(i)), &log)
    });
    let (models, groups): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    timing.stage2_secs = t2.elapsed().as_secs_f64();

    let mode = if setup.cfg.pruning.enabled {
        RunMode::TwoStage
    } else {
        RunMode::TwoStageNoPrune
    };
    finish_run(exp, &setup, mode, Some((&base, &base_log)), models, groups, timing, started)
}

/// Per-group step budgets for the single-stage baseline. Without an explicit
/// `training.single_stage_steps`, the two-stage total is split over the
/// active groups so both variants spend the same number of steps.
pub fn single_stage_budget(setup: &Setup) -> Vec<usize> {
    let active: Vec<usize> = setup.plan.active_groups().collect();
    let mut steps = vec![0; setup.plan.num_groups()];
    let tc = &setup.cfg.training;
    match tc.single_stage_steps {
        Some(s) => active.iter().for_each(|&i| steps[i] = s),
        None if !active.is_empty() => {
            let total = tc.stage1_steps + tc.stage2_steps * active.len();
            let (each, extra) = (total / active.len(), total % active.len());
            for (n, &i) in active.iter().enumerate() {
                steps[i] = each + usize::from(n < extra);
            }
        }
        None => {}
    }
    steps
}

/// `spec` with every hidden width capped at the largest common value that
/// fits `limit`.
fn capped_spec(spec: &DenoiserSpec, limit: u64) -> DenoiserSpec {
    let widest = spec.hidden_widths.iter().copied().max().unwrap_or(1);
    let capped = |m: usize| -> Vec<usize> { spec.hidden_widths.iter().map(|&w| w.min(m)).collect() };
    let m = (1..=widest)
        .rev()
        .find(|&m| flops_for_widths(spec.input_dim, spec.time_embed_dim, &capped(m)) <= limit)
        .unwrap_or(1);
    DenoiserSpec {
        hidden_widths: capped(m),
        ..spec.clone()
    }
}

/// Single-stage training of group `i`: a fresh model with uniformly capped
/// widths within the group's budget, trained on the group's timesteps only.
pub fn single_stage_group(
    setup: &Setup,
    i: usize,
    steps: usize,
    dir: Option<&Path>,
    log: Log<'_>,
) -> Result<(Option<Parameters>, GroupReport), PipelineError> {
    if let Some(done) = dir.map(load_group).transpose()?.flatten() {
        return Ok(done);
    }
    let members = &setup.plan.members[i];
    if members.is_empty() {
        let report = skipped_report(setup, i);
        if let Some(d) = dir {
            store_group(d, None, &report)?;
        }
        return Ok((None, report));
    }
    let seed = setup.seed();
    let spec = if setup.cfg.pruning.enabled {
        capped_spec(&setup.spec, setup.group_constraint(i))
    } else {
        setup.spec.clone()
    };
    let mut model = Parameters::init(&spec, derive_seed(seed, "single-init", i as u64))?;
    let eval = setup.group_eval_batch(i);
    let job = TrainJob {
        tag: "single",
        index: i as u64,
        timesteps: members,
        steps,
        lr: setup.cfg.training.lr,
        heldout: &eval,
        checkpoint: None,
    };
    let tl = train(setup, &mut model, &job, log)?;
    let report = GroupReport {
        index: i,
        timesteps: format_ranges(members),
        count: members.len(),
        skipped: false,
        note: None,
        flops_limit: setup.plan.limits.w[i],
        constraint: setup.group_constraint(i),
        achieved_flops: Some(count_flops(&spec, None)?),
        hidden_widths: Some(spec.hidden_widths.clone()),
        reference_loss: Some(tl.initial_loss),
        prune: None,
        train: Some(tl),
    };
    if let Some(d) = dir {
        store_group(d, Some(&model), &report)?;
    }
    Ok((Some(model), report))
}

/// Single-stage baseline in `exp`: no base model, one model per group.
pub fn single_stage_train(exp: &Experiment) -> Result<(RunReport, Timing), PipelineError> {
    let started = Instant::now();
    let setup = Setup::new(&exp.cfg)?;
    write_plan(exp, &setup)?;
    let budget = single_stage_budget(&setup);
    let log = |m: &str| exp.log(m);
    let results = par::map_range(setup.plan.num_groups(), |i| {
        single_stage_group(&setup, i, budget[i], Some(&exp.group_dir(i)), &log)
    });
    let (models, groups): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    let timing = Timing {
        stage2_secs: started.elapsed().as_secs_f64(),
        ..Timing::default()
    };
    finish_run(exp, &setup, RunMode::SingleStage, None, models, groups, timing, started)
}

/// One row of the FLOPs-shape comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub shape: TargetShape,
    pub group_sizes: Vec<usize>,
    pub flops_ratio: f64,
    pub energy_distance: f64,
    pub sliced_wasserstein: f64,
}

/// Runs the two-stage pipeline once per shape under `dir/<shape>/`. The base
/// model does not depend on the shape, so it is trained once and copied.
pub fn schedule_ablation(
    dir: &Path,
    cfg: &ExperimentConfig,
    shapes: &[TargetShape],
) -> Result<Vec<AblationRow>, PipelineError> {
    let _lock = DirLock::acquire(dir)?;
    let mut rows = Vec::with_capacity(shapes.len());
    let mut first_base: Option<std::path::PathBuf> = None;
    for &shape in shapes {
        let mut c = cfg.clone();
        c.allocation.shape = shape;
        let sub = dir.join(shape.name());
        if let Some(src) = &first_base {
            let dst = sub.join("base");
            if !dst.join("result.json").exists() {
                fs::create_dir_all(&dst).map_err(experiment::io_err(&dst))?;
                for f in ["ckpt.bin", "result.json"] {
                    fs::copy(src.join(f), dst.join(f)).map_err(experiment::io_err(&dst))?;
                }
            }
        }
        let exp = Experiment::create(&sub, c)?;
        let (report, _) = tdc_train(&exp)?;
        first_base.get_or_insert_with(|| exp.base_dir());
        rows.push(AblationRow {
            shape,
            group_sizes: report.groups.iter().map(|g| g.count).collect(),
            flops_ratio: report.flops_ratio,
            energy_distance: report.metrics.energy_distance,
            sliced_wasserstein: report.metrics.sliced_wasserstein,
        });
    }
    let path = dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| PipelineError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    let csv_err = |e: csv::Error| PipelineError::Io {
        path: path.clone(),
        source: e.into(),
    };
    w.write_record(["shape", "group_sizes", "flops_ratio", "energy_distance", "sliced_wasserstein"])
        .map_err(csv_err)?;
    for r in &rows {
        let sizes = r.group_sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([
            r.shape.name().to_string(),
            sizes,
            format!("{:.6}", r.flops_ratio),
            format!("{:.6}", r.energy_distance),
            format!("{:.6}", r.sliced_wasserstein),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(experiment::io_err(&path))?;
    Ok(rows)
}
