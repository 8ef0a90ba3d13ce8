//! Language-model proxy: structured prompt, chat-completion call, and parsing
//! of the returned removal map.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::denoiser::DenoiserSpec;

use super::{PruneContext, PruneError, PruningScheme, Proposal, Proxy, ProxyKind, ProxyRequest};

pub const ENV_URL: &str = "PD_LLM_URL";
pub const ENV_MODEL: &str = "PD_LLM_MODEL";
pub const ENV_KEY: &str = "PD_LLM_KEY";

/// Maximum number of memory-bank lines in a prompt.
pub const HISTORY_CAP: usize = 20;

const SYSTEM_MESSAGE: &str =
    "You select hidden channels to remove from a diffusion denoiser. Answer with JSON only.";

/// Builds the prompt. Sections always appear in the same order:
/// ROLE, ARCHITECTURE, CONSTRAINT, GROUP, HISTORY, OUTPUT FORMAT.
pub fn build_prompt(req: &ProxyRequest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## ROLE");
    let _ = writeln!(
        out,
        "You are the importance-evaluation proxy for structured pruning of a noise-prediction \
         network. Choose hidden channels whose removal hurts the denoising loss least on the \
         timestep group below, so that the pruned network meets the FLOPs limit."
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "## ARCHITECTURE");
    let _ = writeln!(out, "layer | kind | width | flops | flops_share");
    for layer in &req.layers {
        let kind = if layer.prunable { "hidden" } else { "output" };
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {:.4}",
            layer.index, kind, layer.width, layer.flops, layer.share
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "## CONSTRAINT");
    let _ = writeln!(out, "flops_limit: {}", req.flops_limit);
    let _ = writeln!(out, "current_flops: {}", req.current_flops);
    let _ = writeln!(out, "every hidden layer must keep at least one channel");
    let _ = writeln!(out);
    let _ = writeln!(out, "## GROUP");
    let g = &req.group;
    let _ = writeln!(out, "group: {}", g.index);
    let _ = writeln!(out, "timesteps: {} (count {})", g.timesteps, g.count);
    let _ = writeln!(out, "snr_db_range: [{:.4}, {:.4}]", g.snr_min, g.snr_max);
    let _ = writeln!(out, "settings: {}", req.settings);
    let _ = writeln!(out);
    let _ = writeln!(out, "## HISTORY");
    if req.history.is_empty() {
        let _ = writeln!(out, "none");
    } else {
        let mut ranked = req.history.clone();
        ranked.sort_by(super::MemoryBankEntry::rank_cmp);
        for e in ranked.iter().take(HISTORY_CAP) {
            let remove = serde_json::to_string(&e.remove).unwrap_or_default();
            let _ = writeln!(out, "{remove} -> loss {:.6} flops {}", e.loss, e.flops);
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "## OUTPUT FORMAT");
    let _ = writeln!(
        out,
        "Reply with exactly one JSON object: {{\"remove\": {{\"<layer_index>\": [channel indices]}}}}"
    );
    out
}

/// Tunables that may come from a config file. Never holds credentials.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmOptions {
    pub temperature: f64,
    pub timeout: Duration,
    pub max_retries: u32,
}

impl Default for LlmOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            timeout: Duration::from_secs(60),
            max_retries: 3,
        }
    }
}

/// Endpoint settings. URL, model and key come from the environment only.
#[derive(Debug, Clone)]
pub struct LlmEndpoint {
    pub url: String,
    pub model: String,
    pub key: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; it doubles after each failed attempt.
    pub backoff: Duration,
}

impl LlmEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>, key: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            key: key.into(),
            temperature: 0.7,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_secs(1),
        }
    }

    pub fn from_env() -> Result<Self, PruneError> {
        let var = |name: &'static str| std::env::var(name).map_err(|_| PruneError::MissingEnv(name));
        Ok(Self::new(var(ENV_URL)?, var(ENV_MODEL)?, var(ENV_KEY)?))
    }

    pub fn with_options(mut self, opts: &LlmOptions) -> Self {
        self.temperature = opts.temperature;
        self.timeout = opts.timeout;
        self.max_retries = opts.max_retries;
        self
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.temperature,
        })
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

/// One chat-completion request with retries on transport errors, 429 and
/// 5xx. Returns the raw response body.
pub fn llm_proxy_call(endpoint: &LlmEndpoint, prompt: &str) -> Result<String, PruneError> {
    let agent = ureq::AgentBuilder::new().timeout(endpoint.timeout).build();
    let body = endpoint.request_body(prompt).to_string();
    let mut delay = endpoint.backoff;
    let mut last = String::new();
    for attempt in 0..=endpoint.max_retries {
        if attempt > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        let result = agent
            .post(&endpoint.url)
            .set("Content-Type", "application/json")
            .set("Authorization", &format!("Bearer {}", endpoint.key))
            .send_string(&body);
        match result {
            Ok(resp) => {
                return resp
                    .into_string()
                    .map_err(|e| PruneError::ProxyUnavailable(format!("reading body: {e}")));
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    last = format!("status {code}: {}", excerpt(&text));
                } else {
                    return Err(PruneError::ProxyStatus {
                        status: code,
                        body: excerpt(&text),
                    });
                }
            }
            Err(ureq::Error::Transport(t)) => last = t.to_string(),
        }
    }
    Err(PruneError::ProxyUnavailable(format!(
        "{} attempts failed, last: {last}",
        endpoint.max_retries + 1
    )))
}

/// The assistant message of a chat-completion body, or the body itself when
/// it is not one.
pub fn response_content(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_owned)
        })
        .unwrap_or_else(|| body.to_string())
}

fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Parses `{"remove": {"<layer>": [indices]}}` out of free text and checks it
/// against `spec`. Duplicate indices are dropped.
pub fn llm_proxy_parse(text: &str, spec: &DenoiserSpec) -> Result<PruningScheme, PruneError> {
    let parse_err = |reason: String| PruneError::Parse {
        reason,
        text: text.to_string(),
    };
    let obj = first_json_object(text).ok_or_else(|| parse_err("no JSON object found".into()))?;
    let remove = obj
        .get("remove")
        .and_then(Value::as_object)
        .ok_or_else(|| parse_err("missing \"remove\" object".into()))?;
    let mut out = BTreeMap::new();
    for (key, value) in remove {
        let layer: usize = key
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("layer key {key:?} is not an index")))?;
        let width = *spec
            .hidden_widths
            .get(layer)
            .ok_or_else(|| parse_err(format!("layer {layer} does not exist")))?;
        let list = value
            .as_array()
            .ok_or_else(|| parse_err(format!("layer {layer}: expected a list of indices")))?;
        let mut idx = Vec::with_capacity(list.len());
        for v in list {
            let j = v
                .as_u64()
                .ok_or_else(|| parse_err(format!("layer {layer}: {v} is not a channel index")))?
                as usize;
            if j >= width {
                return Err(parse_err(format!("layer {layer} index {j} out of range (width {width})")));
            }
            idx.push(j);
        }
        idx.sort_unstable();
        idx.dedup();
        if !idx.is_empty() {
            out.insert(layer, idx);
        }
    }
    Ok(PruningScheme {
        remove: out,
        proxy: ProxyKind::Llm,
        round: 0,
    })
}

/// Something that turns a prompt into a raw response body.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, PruneError>;
}

impl ChatBackend for LlmEndpoint {
    fn complete(&self, prompt: &str) -> Result<String, PruneError> {
        llm_proxy_call(self, prompt)
    }
}

impl<F> ChatBackend for F
where
    F: Fn(&str) -> Result<String, PruneError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, PruneError> {
        self(prompt)
    }
}

/// Proxy that asks a language model for each candidate.
pub struct LlmProxy {
    backend: Box<dyn ChatBackend>,
    archive: Option<PathBuf>,
}

impl LlmProxy {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self { backend, archive: None }
    }

    /// Saves every prompt and raw response under `dir`.
    pub fn with_archive(mut self, dir: PathBuf) -> Self {
        self.archive = Some(dir);
        self
    }

    fn save(&self, name: &str, text: &str) {
        if let Some(dir) = &self.archive {
            let _ = fs::create_dir_all(dir);
            let _ = fs::write(dir.join(name), text);
        }
    }
}

impl Proxy for LlmProxy {
    fn kind(&self) -> ProxyKind {
        ProxyKind::Llm
    }

    fn propose(&mut self, ctx: &PruneContext<'_>, req: &ProxyRequest) -> Result<Vec<Proposal>, PruneError> {
        let prompt = build_prompt(req);
        self.save(&format!("round{}.prompt.txt", req.round), &prompt);
        let mut out = Vec::with_capacity(req.candidates);
        for c in 0..req.candidates {
            // A transport failure aborts the round; the caller falls back.
            let body = self.backend.complete(&prompt)?;
            self.save(&format!("round{}-cand{c}.response.txt", req.round), &body);
            out.push(llm_proxy_parse(&response_content(&body), ctx.params.spec()));
        }
        Ok(out)
    }
}
