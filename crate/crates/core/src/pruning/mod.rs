//! Proxy-driven structured pruning.
//!
//! A [`Proxy`] proposes channel-removal schemes for one timestep group under a
//! FLOPs limit. [`propose_schemes`] validates and repairs them,
//! [`evaluate_scheme`] scores them on held-out data, and [`iterative_prune`]
//! runs the round loop while appending every result to a [`MemoryBank`].

mod bank;
mod importance;
pub mod llm;
mod proxies;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{
    apply_mask, count_flops, layer_flops, loss, DenoiserError, DenoiserSpec, Example, Parameters, PruneMask,
};
use crate::par;
use crate::schedule::NoiseSchedule;

pub use bank::{MemoryBank, MemoryBankEntry};
pub use importance::{greedy_removal, magnitude_importance, taylor_importance, ChannelScores, Ranking};
pub use llm::{build_prompt, llm_proxy_call, llm_proxy_parse, ChatBackend, LlmEndpoint, LlmOptions, LlmProxy};
pub use proxies::{make_proxy, MagnitudeProxy, RandomProxy, TaylorProxy};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error("cannot reach {limit} FLOPs without emptying a layer (stuck at {flops})")]
    Unrepairable { flops: u64, limit: u64 },
    #[error("invalid scheme: {0}")]
    Invalid(String),
    #[error("could not parse proxy output ({reason}): {text}")]
    Parse { reason: String, text: String },
    #[error("proxy unavailable: {0}")]
    ProxyUnavailable(String),
    #[error("proxy endpoint returned status {status}: {body}")]
    ProxyStatus { status: u16, body: String },
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("memory bank: {0}")]
    Bank(String),
    #[error("invalid pruning settings: {0}")]
    Settings(String),
    #[error("no valid candidate was produced in {rounds} rounds")]
    NoValidCandidate { rounds: usize },
}

/// Which importance mechanism produced a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyKind {
    Random,
    Magnitude,
    Taylor,
    Llm,
}

impl ProxyKind {
    pub const ALL: [ProxyKind; 4] = [ProxyKind::Random, ProxyKind::Magnitude, ProxyKind::Taylor, ProxyKind::Llm];

    pub fn name(self) -> &'static str {
        match self {
            ProxyKind::Random => "random",
            ProxyKind::Magnitude => "magnitude",
            ProxyKind::Taylor => "taylor",
            ProxyKind::Llm => "llm",
        }
    }
}

impl fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProxyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown proxy {s:?} (expected random, magnitude, taylor or llm)"))
    }
}

/// Channels to remove from each hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningScheme {
    pub remove: BTreeMap<usize, Vec<usize>>,
    pub proxy: ProxyKind,
    pub round: usize,
}

impl PruningScheme {
    pub fn empty(proxy: ProxyKind) -> Self {
        Self {
            remove: BTreeMap::new(),
            proxy,
            round: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.remove.values().all(Vec::is_empty)
    }

    pub fn to_mask(&self, spec: &DenoiserSpec) -> Result<PruneMask, PruneError> {
        Ok(PruneMask::from_removals(spec, &self.remove)?)
    }

    pub fn flops(&self, spec: &DenoiserSpec) -> Result<u64, PruneError> {
        Ok(count_flops(spec, Some(&self.to_mask(spec)?))?)
    }
}

/// One row of the architecture table given to a proxy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub index: usize,
    pub width: usize,
    pub flops: u64,
    pub share: f64,
    pub prunable: bool,
}

/// The timestep group a scheme is being chosen for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDescriptor {
    pub index: usize,
    /// Compact range text such as `0-12,15`.
    pub timesteps: String,
    pub count: usize,
    pub snr_min: f64,
    pub snr_max: f64,
}

/// Everything a proxy is told about one round.
#[derive(Debug, Clone)]
pub struct ProxyRequest {
    pub layers: Vec<LayerSummary>,
    pub flops_limit: u64,
    pub current_flops: u64,
    pub group: GroupDescriptor,
    pub settings: String,
    /// Prior bank entries, best first.
    pub history: Vec<MemoryBankEntry>,
    pub candidates: usize,
    pub round: usize,
}

impl ProxyRequest {
    pub fn new(
        spec: &DenoiserSpec,
        flops_limit: u64,
        group: GroupDescriptor,
        settings: String,
        mut history: Vec<MemoryBankEntry>,
        candidates: usize,
        round: usize,
    ) -> Self {
        let shapes = spec.layer_shapes();
        let hidden = spec.num_hidden();
        let per_layer: Vec<u64> = shapes
            .iter()
            .enumerate()
            .map(|(l, &(out, inp))| layer_flops(inp, out, l < hidden))
            .collect();
        let total: u64 = per_layer.iter().sum();
        let layers = shapes
            .iter()
            .zip(&per_layer)
            .enumerate()
            .map(|(l, (&(out, _), &flops))| LayerSummary {
                index: l,
                width: out,
                flops,
                share: flops as f64 / total as f64,
                prunable: l < hidden,
            })
            .collect();
        history.sort_by(MemoryBankEntry::rank_cmp);
        Self {
            layers,
            flops_limit,
            current_flops: total,
            group,
            settings,
            history,
            candidates,
            round,
        }
    }
}

/// Read-only inputs shared by all proxies.
#[derive(Clone, Copy)]
pub struct PruneContext<'a> {
    pub params: &'a Parameters,
    pub schedule: &'a NoiseSchedule,
    /// Batch used by gradient-based proxies.
    pub calibration: &'a [Example],
}

/// A proxy's answer for one candidate slot.
pub type Proposal = Result<PruningScheme, PruneError>;

pub trait Proxy: Send {
    fn kind(&self) -> ProxyKind;

    /// Returns `req.candidates` proposals. An `Err` from this call means the
    /// proxy failed as a whole for the round.
    fn propose(&mut self, ctx: &PruneContext<'_>, req: &ProxyRequest) -> Result<Vec<Proposal>, PruneError>;
}

/// Validated output of one proxy round.
#[derive(Debug, Default)]
pub struct Proposals {
    pub schemes: Vec<PruningScheme>,
    pub repaired: usize,
    pub rejected: Vec<PruneError>,
}

/// Checks indices and layer survival, then greedily removes the
/// lowest-magnitude channels until the scheme fits `limit`.
pub fn validate_and_repair(
    p: &Parameters,
    scheme: PruningScheme,
    limit: u64,
) -> Result<(PruningScheme, bool), PruneError> {
    let spec = p.spec();
    let mut remove = BTreeMap::new();
    for (&l, idx) in &scheme.remove {
        let width = *spec
            .hidden_widths
            .get(l)
            .ok_or_else(|| PruneError::Invalid(format!("layer {l} does not exist")))?;
        let mut idx = idx.clone();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&j| j >= width) {
            return Err(PruneError::Invalid(format!("layer {l} index {bad} out of range")));
        }
        if idx.len() >= width {
            return Err(PruneError::Invalid(format!("scheme empties layer {l}")));
        }
        if !idx.is_empty() {
            remove.insert(l, idx);
        }
    }
    let before = remove.clone();
    let remove = greedy_removal(spec, &magnitude_importance(p), &remove, limit, Ranking::Raw)?;
    let repaired = remove != before;
    Ok((PruningScheme { remove, ..scheme }, repaired))
}

/// Asks `proxy` for candidates and keeps the valid (possibly repaired) ones.
pub fn propose_schemes(
    proxy: &mut dyn Proxy,
    ctx: &PruneContext<'_>,
    req: &ProxyRequest,
) -> Result<Proposals, PruneError> {
    if req.candidates == 0 {
        return Err(PruneError::Settings("candidate count must be at least 1".into()));
    }
    let mut out = Proposals::default();
    for proposal in proxy.propose(ctx, req)? {
        match proposal.and_then(|s| validate_and_repair(ctx.params, s, req.flops_limit)) {
            Ok((mut scheme, repaired)) => {
                scheme.round = req.round;
                out.repaired += usize::from(repaired);
                out.schemes.push(scheme);
            }
            Err(e) => out.rejected.push(e),
        }
    }
    Ok(out)
}

/// Loss of `base` with `scheme` applied, on a fixed batch. No fine-tuning.
pub fn evaluate_scheme(
    base: &Parameters,
    scheme: &PruningScheme,
    schedule: &NoiseSchedule,
    batch: &[Example],
) -> Result<f64, PruneError> {
    let pruned = apply_mask(base, &scheme.to_mask(base.spec())?)?;
    Ok(loss(&pruned, batch, schedule)?)
}

/// Loop settings for [`iterative_prune`].
#[derive(Debug, Clone)]
pub struct PruneSettings {
    pub rounds: usize,
    pub candidates: usize,
    pub flops_limit: u64,
    pub group: GroupDescriptor,
    pub settings: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub losses: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub best_so_far: Option<f64>,
    /// Why the round fell back to the magnitude proxy, if it did.
    pub fallback: Option<String>,
    pub repaired: usize,
    /// Candidates dropped, with reasons.
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub best: PruningScheme,
    pub best_loss: f64,
    pub best_flops: u64,
    pub rounds: Vec<RoundSummary>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Runs `settings.rounds` proxy rounds, evaluates every candidate on
/// `eval_batch`, appends each to `bank`, and returns the best scheme seen.
pub fn iterative_prune(
    ctx: &PruneContext<'_>,
    eval_batch: &[Example],
    proxy: &mut dyn Proxy,
    settings: &PruneSettings,
    bank: &mut MemoryBank,
) -> Result<PruneOutcome, PruneError> {
    if settings.rounds == 0 || settings.candidates == 0 {
        return Err(PruneError::Settings("rounds and candidates must be at least 1".into()));
    }
    let spec = ctx.params.spec();
    let mut best: Option<MemoryBankEntry> = None;
    let mut rounds = Vec::with_capacity(settings.rounds);
    for round in 0..settings.rounds {
        let req = ProxyRequest::new(
            spec,
            settings.flops_limit,
            settings.group.clone(),
            settings.settings.clone(),
            bank.entries().to_vec(),
            settings.candidates,
            round,
        );
        let (proposals, fallback) = match propose_schemes(proxy, ctx, &req) {
            Ok(p) => (p, None),
            Err(e) => {
                let mut magnitude = MagnitudeProxy;
                let mut p = propose_schemes(&mut magnitude, ctx, &req)?;
                for s in &mut p.schemes {
                    s.proxy = ProxyKind::Magnitude;
                }
                (p, Some(e.to_string()))
            }
        };
        let mut rejected: Vec<String> = proposals.rejected.iter().map(ToString::to_string).collect();
        let scored = par::map_slice(&proposals.schemes, |s| {
            let flops = s.flops(spec)?;
            let l = evaluate_scheme(ctx.params, s, ctx.schedule, eval_batch)?;
            Ok::<_, PruneError>((flops, l))
        });
        let mut losses = Vec::with_capacity(scored.len());
        for (scheme, result) in proposals.schemes.iter().zip(scored) {
            let entry = match result {
                Ok((flops, l)) if l.is_finite() => MemoryBankEntry::new(scheme, flops, l),
                Ok((_, l)) => {
                    rejected.push(format!("non-finite loss {l}"));
                    continue;
                }
                Err(e) => {
                    rejected.push(e.to_string());
                    continue;
                }
            };
            losses.push(entry.loss);
            if best.as_ref().is_none_or(|b| entry.rank_cmp(b).is_lt()) {
                best = Some(entry.clone());
            }
            bank.update(entry)?;
        }
        let (mean, std) = mean_std(&losses);
        rounds.push(RoundSummary {
            round,
            losses,
            mean,
            std,
            best_so_far: best.as_ref().map(|b| b.loss),
            fallback,
            repaired: proposals.repaired,
            rejected,
        });
    }
    let best = best.ok_or(PruneError::NoValidCandidate {
        rounds: settings.rounds,
    })?;
    Ok(PruneOutcome {
        best_loss: best.loss,
        best_flops: best.flops,
        best: best.scheme(),
        rounds,
    })
}
