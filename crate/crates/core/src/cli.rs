//! Command-line interface. Exit status: 0 on success, 1 on usage or config
//! errors, 2 on runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::allocation::TargetShape;
use crate::pipeline::{
    ensure_base, load_model_bank, prune_group, read_json, schedule_ablation, single_stage_train, specialize_group,
    tdc_train, write_json, Experiment, ExperimentConfig, PipelineError, RunReport, Setup,
};
use crate::pruning::ProxyKind;
use crate::sampler::{evaluate_run, trajectory_flops, write_samples_csv, ddim_sample_bank, EvalSettings};

#[derive(Debug, Parser)]
#[command(name = "progdiff", version, about = "Timestep-grouped diffusion training with FLOPs-budgeted pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Experiment directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides training.seed.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Overrides pruning.proxy.
    #[arg(long, global = true, value_name = "KIND")]
    pub proxy: Option<ProxyKind>,
    /// Overrides allocation.groups.
    #[arg(long, global = true, value_name = "N")]
    pub groups: Option<usize>,
    /// Overrides allocation.k.
    #[arg(long, global = true, value_name = "FRACTION")]
    pub k: Option<f64>,
    /// Fine-tune the unpruned base for every group.
    #[arg(long, global = true)]
    pub no_prune: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write plan.txt with group limits and timestep ranges; no training.
    Plan,
    /// Stage 1 only.
    TrainBase,
    /// Run the proxy loop for each group against the stored base model.
    Prune {
        /// Only this group.
        #[arg(long)]
        group: Option<usize>,
    },
    /// Fine-tune each group (pruning first where no scheme is stored).
    Finetune {
        #[arg(long)]
        group: Option<usize>,
    },
    /// Stage 1, then pruning and fine-tuning for every group, then evaluation.
    Pipeline,
    /// One model per group trained from scratch at a matched step budget.
    SingleStage,
    /// Two-stage runs under alternative per-timestep FLOPs shapes.
    AblateSchedule {
        /// Comma-separated subset of snr, constant, uni-increasing, uni-decreasing.
        #[arg(long, value_delimiter = ',')]
        shapes: Option<Vec<TargetShape>>,
    },
    /// Draw samples from a trained run into a CSV file.
    Sample {
        #[arg(long)]
        samples: Option<usize>,
        /// Output file; defaults to samples.csv in the experiment directory.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Sampling metrics and FLOPs of a trained run, as JSON.
    Eval,
    /// Print the report of a finished run.
    Report,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<crate::sampler::SamplerError> for Failure {
    fn from(e: crate::sampler::SamplerError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` and runs the command, writing to `out` and `err`. Returns
/// the process exit status.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    cli.out.as_deref().ok_or_else(|| usage("--out DIR is required for this command"))
}

/// The config from `--config` with command-line overrides applied.
fn resolved_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| usage("--config PATH is required for this command"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if cli.no_prune && cli.proxy.is_some() {
        return Err(usage("--no-prune and --proxy cannot be combined: without pruning no proxy runs"));
    }
    if let Some(s) = cli.seed {
        cfg.training.seed = s;
    }
    if let Some(p) = cli.proxy {
        cfg.pruning.proxy = p;
    }
    if let Some(g) = cli.groups {
        cfg.allocation.groups = g;
    }
    if let Some(k) = cli.k {
        cfg.allocation.k = k;
    }
    if cli.no_prune {
        cfg.pruning.enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(cli: &Cli) -> Result<Experiment, Failure> {
    let cfg = resolved_config(cli)?;
    Ok(Experiment::create(out_dir(cli)?, cfg)?)
}

fn selected_groups(setup: &Setup, group: Option<usize>) -> Result<Vec<usize>, Failure> {
    match group {
        Some(g) if g >= setup.plan.num_groups() => Err(usage(format!(
            "--group {g} is out of range (the plan has {} groups)",
            setup.plan.num_groups()
        ))),
        Some(g) => Ok(vec![g]),
        None => Ok(setup.plan.active_groups().collect()),
    }
}

fn stored_base(exp: &Experiment) -> Result<crate::denoiser::Parameters, Failure> {
    let ckpt = exp.base_dir().join("ckpt.bin");
    if !exp.base_dir().join("result.json").exists() {
        return Err(Failure::Runtime(format!(
            "no finished base model in {}; run train-base first",
            exp.dir.display()
        )));
    }
    crate::denoiser::load_checkpoint(&ckpt)
        .map(|(p, _)| p)
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let print = |out: &mut dyn Write, s: &str| {
        let _ = writeln!(out, "{s}");
    };
    match &cli.command {
        Command::Plan => {
            let cfg = resolved_config(cli)?;
            let setup = Setup::new(&cfg)?;
            let text = setup.plan.to_plan_text();
            match &cli.out {
                Some(dir) => {
                    let exp = Experiment::create(dir, cfg)?;
                    crate::pipeline::write_atomic(&exp.dir.join("plan.txt"), text.as_bytes())?;
                    print(out, &format!("wrote {}", exp.dir.join("plan.txt").display()));
                }
                None => print(out, &text),
            }
        }
        Command::TrainBase => {
            let exp = create(cli)?;
            let setup = Setup::new(&exp.cfg)?;
            let (_, tl) = ensure_base(&exp, &setup)?;
            print(
                out,
                &format!("base model: held-out loss {:.5} -> {:.5} over {} steps", tl.initial_loss, tl.final_loss, tl.steps),
            );
        }
        Command::Prune { group } => {
            let exp = create(cli)?;
            if !exp.cfg.pruning.enabled {
                return Err(usage("prune cannot run with pruning disabled"));
            }
            let setup = Setup::new(&exp.cfg)?;
            let base = stored_base(&exp)?;
            let log = |m: &str| exp.log(m);
            for i in selected_groups(&setup, *group)? {
                if setup.plan.members[i].is_empty() {
                    print(out, &format!("group {i}: empty, skipped"));
                    continue;
                }
                let dir = exp.group_dir(i);
                let summary = prune_group(&setup, &base, i, Some(&dir), &log)?;
                write_json(&dir.join("scheme.json"), &summary)?;
                print(
                    out,
                    &format!(
                        "group {i}: best loss {:.5} at {} FLOPs (limit {})",
                        summary.best_loss,
                        summary.best_flops,
                        setup.group_constraint(i)
                    ),
                );
            }
        }
        Command::Finetune { group } => {
            let exp = create(cli)?;
            let setup = Setup::new(&exp.cfg)?;
            let base = stored_base(&exp)?;
            let log = |m: &str| exp.log(m);
            for i in selected_groups(&setup, *group)? {
                let (_, report) = specialize_group(&setup, &base, i, Some(&exp.group_dir(i)), &log)?;
                match (&report.train, report.achieved_flops) {
                    (Some(tl), Some(flops)) => print(
                        out,
                        &format!("group {i}: loss {:.5} -> {:.5}, {flops} FLOPs", tl.initial_loss, tl.final_loss),
                    ),
                    _ => print(out, &format!("group {i}: skipped")),
                }
            }
        }
        Command::Pipeline => {
            let exp = create(cli)?;
            let (report, _) = tdc_train(&exp)?;
            print(out, &report.to_table());
        }
        Command::SingleStage => {
            let exp = create(cli)?;
            let (report, _) = single_stage_train(&exp)?;
            print(out, &report.to_table());
        }
        Command::AblateSchedule { shapes } => {
            let cfg = resolved_config(cli)?;
            let shapes = shapes.clone().unwrap_or_else(|| TargetShape::ALL.to_vec());
            let rows = schedule_ablation(out_dir(cli)?, &cfg, &shapes)?;
            print(out, &format!("{:<16} {:>22} {:>12} {:>16} {:>12}", "shape", "group sizes", "flops ratio", "energy distance", "sliced W2"));
            for r in rows {
                let sizes = r.group_sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
                print(
                    out,
                    &format!(
                        "{:<16} {:>22} {:>12.4} {:>16.5} {:>12.5}",
                        r.shape.name(),
                        sizes,
                        r.flops_ratio,
                        r.energy_distance,
                        r.sliced_wasserstein
                    ),
                );
            }
        }
        Command::Sample { samples, file } => {
            let exp = Experiment::open(out_dir(cli)?)?;
            let setup = Setup::new(&exp.cfg)?;
            let bank = load_model_bank(&exp, &setup)?;
            let sc = &exp.cfg.sampling;
            let n = samples.unwrap_or(sc.samples);
            let xs = ddim_sample_bank(&bank, &setup.schedule, sc.steps, n, sc.seed)?;
            let path = file.clone().unwrap_or_else(|| exp.dir.join("samples.csv"));
            write_samples_csv(&path, &xs)?;
            print(out, &format!("wrote {n} samples to {}", path.display()));
        }
        Command::Eval => {
            let exp = Experiment::open(out_dir(cli)?)?;
            let setup = Setup::new(&exp.cfg)?;
            let bank = load_model_bank(&exp, &setup)?;
            let sc = &exp.cfg.sampling;
            let settings = EvalSettings {
                dataset: exp.cfg.dataset.name,
                steps: sc.steps,
                samples: sc.samples,
                seed: sc.seed,
            };
            let (metrics, _) = evaluate_run(&bank, &setup.schedule, &settings)?;
            let tf = trajectory_flops(&bank, sc.steps)?;
            let json = serde_json::json!({
                "metrics": metrics,
                "trajectory_flops": tf,
                "flops_ratio": tf.mean / setup.full_flops as f64,
            });
            print(out, &serde_json::to_string_pretty(&json).unwrap_or_default());
        }
        Command::Report => {
            let dir = out_dir(cli)?;
            let report: RunReport = read_json(&dir.join("report.json"))?;
            print(out, &report.to_table());
        }
    }
    Ok(())
}
