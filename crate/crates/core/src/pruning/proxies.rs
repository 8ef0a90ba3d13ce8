//! Heuristic proxies and the proxy factory.

use std::path::PathBuf;

use rand::Rng as _;

use crate::rng::rng_for;

use super::llm::{LlmEndpoint, LlmOptions, LlmProxy};
use super::{
    greedy_removal, magnitude_importance, taylor_importance, ChannelScores, PruneContext, PruneError, PruningScheme,
    Proposal, Proxy, ProxyKind, ProxyRequest, Ranking,
};

fn greedy_candidates(ctx: &PruneContext<'_>, req: &ProxyRequest, scores: &ChannelScores, kind: ProxyKind) -> Vec<Proposal> {
    (0..req.candidates)
        .map(|c| {
            let remove = greedy_removal(
                ctx.params.spec(),
                scores,
                &Default::default(),
                req.flops_limit,
                Ranking::for_candidate(c),
            )?;
            Ok(PruningScheme {
                remove,
                proxy: kind,
                round: req.round,
            })
        })
        .collect()
}

/// Uniformly random channel scores, then greedy removal.
#[derive(Debug, Clone)]
pub struct RandomProxy {
    pub seed: u64,
}

impl Proxy for RandomProxy {
    fn kind(&self) -> ProxyKind {
        ProxyKind::Random
    }

    fn propose(&mut self, ctx: &PruneContext<'_>, req: &ProxyRequest) -> Result<Vec<Proposal>, PruneError> {
        let spec = ctx.params.spec();
        Ok((0..req.candidates)
            .map(|c| {
                let mut rng = rng_for(self.seed, "random-proxy", (req.round * req.candidates + c) as u64);
                let scores: ChannelScores = spec
                    .hidden_widths
                    .iter()
                    .map(|&w| (0..w).map(|_| rng.gen::<f64>()).collect())
                    .collect();
                let remove = greedy_removal(spec, &scores, &Default::default(), req.flops_limit, Ranking::Raw)?;
                Ok(PruningScheme {
                    remove,
                    proxy: ProxyKind::Random,
                    round: req.round,
                })
            })
            .collect())
    }
}

/// Weight-norm importance. Candidate `c` uses ranking `Ranking::for_candidate(c)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MagnitudeProxy;

impl Proxy for MagnitudeProxy {
    fn kind(&self) -> ProxyKind {
        ProxyKind::Magnitude
    }

    fn propose(&mut self, ctx: &PruneContext<'_>, req: &ProxyRequest) -> Result<Vec<Proposal>, PruneError> {
        let scores = magnitude_importance(ctx.params);
        Ok(greedy_candidates(ctx, req, &scores, ProxyKind::Magnitude))
    }
}

/// First-order saliency on the calibration batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaylorProxy;

impl Proxy for TaylorProxy {
    fn kind(&self) -> ProxyKind {
        ProxyKind::Taylor
    }

    fn propose(&mut self, ctx: &PruneContext<'_>, req: &ProxyRequest) -> Result<Vec<Proposal>, PruneError> {
        let scores = taylor_importance(ctx.params, ctx.calibration, ctx.schedule)?;
        Ok(greedy_candidates(ctx, req, &scores, ProxyKind::Taylor))
    }
}

/// Builds a proxy. The language-model proxy reads its endpoint from the
/// environment; when that is incomplete every call fails, so each round
/// falls back to magnitude.
pub fn make_proxy(
    kind: ProxyKind,
    seed: u64,
    llm: &LlmOptions,
    archive: Option<PathBuf>,
) -> Box<dyn Proxy> {
    match kind {
        ProxyKind::Random => Box::new(RandomProxy { seed }),
        ProxyKind::Magnitude => Box::new(MagnitudeProxy),
        ProxyKind::Taylor => Box::new(TaylorProxy),
        ProxyKind::Llm => {
            let proxy = match LlmEndpoint::from_env() {
                Ok(endpoint) => LlmProxy::new(Box::new(endpoint.with_options(llm))),
                Err(PruneError::MissingEnv(var)) => {
                    LlmProxy::new(Box::new(move |_: &str| Err(PruneError::MissingEnv(var))))
                }
                Err(e) => {
                    let msg = e.to_string();
                    LlmProxy::new(Box::new(move |_: &str| Err(PruneError::ProxyUnavailable(msg.clone()))))
                }
            };
            Box::new(match archive {
                Some(dir) => proxy.with_archive(dir),
                None => proxy,
            })
        }
    }
}
