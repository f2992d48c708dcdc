//! Text completion over remote model APIs, plus deterministic mock models.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curriculum::{payload_gold, TaskKind, TestInstance};
use crate::pddl::Plan;
use crate::planner::{Planner, PlannerConfig};
use crate::translator::TemplateSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    Remote,
    MockOracle,
    MockEcho,
    MockPrefix,
    MockSilent,
}

impl EndpointKind {
    pub fn is_mock(self) -> bool {
        self != EndpointKind::Remote
    }
}

impl std::str::FromStr for EndpointKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "remote" => Ok(EndpointKind::Remote),
            "oracle" | "mock-oracle" => Ok(EndpointKind::MockOracle),
            "echo" | "mock-echo" => Ok(EndpointKind::MockEcho),
            "prefix" | "mock-prefix" => Ok(EndpointKind::MockPrefix),
            "silent" | "mock-silent" => Ok(EndpointKind::MockSilent),
            other => Err(format!("unknown endpoint kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay_ms: 500 }
    }
}

/// Model access settings. Secrets are never stored here, only the name of
/// the environment variable that holds the API key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub kind: EndpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    pub max_tokens: u32,
    pub temperature: f32,
    /// Overrides the per-request stop sequences when nonempty.
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Minimum spacing between remote requests.
    #[serde(default)]
    pub min_interval_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ModelEndpoint {
    pub fn mock(kind: EndpointKind) -> Self {
        ModelEndpoint {
            kind,
            base_url: None,
            model_name: String::new(),
            auth_env: None,
            max_tokens: 400,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            timeout_secs: 60,
            max_in_flight: 4,
            min_interval_ms: 0,
            retry: RetryPolicy::default(),
        }
    }

    pub fn remote(base_url: &str, model_name: &str, auth_env: Option<&str>) -> Self {
        ModelEndpoint {
            base_url: Some(base_url.trim_end_matches('/').to_string()),
            model_name: model_name.to_string(),
            auth_env: auth_env.map(str::to_string),
            ..Self::mock(EndpointKind::Remote)
        }
    }

    /// Short label used in records and reports.
    pub fn descriptor(&self) -> String {
        match self.kind {
            EndpointKind::Remote => format!("remote:{}@{}", self.model_name, self.base_url.as_deref().unwrap_or("")),
            k => serde_json::to_value(k).unwrap().as_str().unwrap().to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited; gave up after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("mock model has no instance registered for this prompt")]
    UnknownPrompt,
    #[error("mock model: {0}")]
    Mock(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("endpoint misconfigured: {0}")]
    Config(String),
}

impl GatewayError {
    /// Stable tag for result logs.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Auth(_) => "auth",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::Timeout { .. } => "timeout",
            GatewayError::Http { .. } => "http",
            GatewayError::Transport(_) => "transport",
            GatewayError::Malformed(_) => "malformed",
            GatewayError::UnknownPrompt => "unknown_prompt",
            GatewayError::Mock(_) => "mock",
            GatewayError::Cache(_) => "cache",
            GatewayError::Config(_) => "config",
        }
    }
}

/// What a single transport attempt can report.
#[derive(Debug)]
pub enum AttemptError {
    Transient(GatewayError),
    Fatal(GatewayError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    pub stop: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    pub finish_reason: Option<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// One remote round trip. Implementations must be thread-safe.
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, AttemptError>;
}

/// OpenAI-style `POST {base}/completions`.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, GatewayError> {
        let base = endpoint.base_url.as_deref().ok_or_else(|| GatewayError::Config("remote endpoint needs base_url".into()))?;
        let api_key = match &endpoint.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::Auth(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpTransport { client, url: format!("{base}/completions"), api_key })
    }
}

#[derive(Deserialize)]
struct ApiChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, AttemptError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Transient(GatewayError::Timeout { attempts: 1 })
            } else {
                AttemptError::Transient(GatewayError::Transport(e.to_string()))
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| AttemptError::Transient(GatewayError::Transport(e.to_string())))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(AttemptError::Fatal(GatewayError::Auth(format!("HTTP {status}")))),
            429 => return Err(AttemptError::Transient(GatewayError::RateLimited { attempts: 1 })),
            500..=599 => return Err(AttemptError::Transient(GatewayError::Http { status, body })),
            _ => return Err(AttemptError::Fatal(GatewayError::Http { status, body })),
        }
        let parsed: ApiResponse =
            serde_json::from_str(&body).map_err(|e| AttemptError::Fatal(GatewayError::Malformed(e.to_string())))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Fatal(GatewayError::Malformed("no choices".into())))?;
        Ok(RawCompletion {
            text: choice.text,
            finish_reason: choice.finish_reason,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    pub completion: String,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub endpoint: String,
    #[serde(default)]
    pub cached: bool,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Keeps the text up to and including the first stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let first = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|i| i + s.len()))
        .min();
    match first {
        Some(end) => text[..end].to_string(),
        None => text.to_string(),
    }
}

/// Content-addressed completion store: `<dir>/<hh>/<hash>.json`, written via
/// a temporary file and an atomic rename.
#[derive(Clone, Debug)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DiskCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, record: &CompletionRecord) -> std::io::Result<()> {
        let path = self.path(key);
        let parent = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(serde_json::to_string_pretty(record)?.as_bytes())?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    ready: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n.max(1)), ready: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.ready.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.ready.notify_one();
    }
}

/// Shared entry point for completions. Cheap to share across worker threads.
pub struct Gateway {
    endpoint: ModelEndpoint,
    transport: Option<Box<dyn Transport>>,
    cache: Option<DiskCache>,
    slots: Slots,
    next_slot: Mutex<Instant>,
    templates: Arc<TemplateSet>,
    planner: Planner,
    registry: Mutex<HashMap<String, Arc<TestInstance>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("endpoint", &self.endpoint.descriptor()).finish()
    }
}

impl Gateway {
    /// A gateway for `endpoint`; remote endpoints get an HTTP transport.
    pub fn new(endpoint: ModelEndpoint, templates: Arc<TemplateSet>) -> Result<Self, GatewayError> {
        let transport: Option<Box<dyn Transport>> = match endpoint.kind {
            EndpointKind::Remote => Some(Box::new(HttpTransport::new(&endpoint)?)),
            _ => None,
        };
        Ok(Self::build(endpoint, transport, templates))
    }

    /// A remote gateway over a caller-supplied transport.
    pub fn with_transport(endpoint: ModelEndpoint, transport: Box<dyn Transport>, templates: Arc<TemplateSet>) -> Self {
        Self::build(endpoint, Some(transport), templates)
    }

    fn build(endpoint: ModelEndpoint, transport: Option<Box<dyn Transport>>, templates: Arc<TemplateSet>) -> Self {
        Gateway {
            slots: Slots::new(endpoint.max_in_flight),
            endpoint,
            transport,
            cache: None,
            next_slot: Mutex::new(Instant::now()),
            templates,
            planner: Planner::new(PlannerConfig::default()),
            registry: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Makes instances known to the mock models, keyed by prompt hash.
    pub fn register(&self, instances: &[TestInstance]) {
        let mut reg = self.registry.lock().unwrap();
        for inst in instances {
            reg.insert(sha256_hex(&inst.prompt), Arc::new(inst.clone()));
        }
    }

    /// Cache key over prompt, endpoint and decoding parameters.
    pub fn cache_key(&self, prompt: &str, stop: &[String]) -> String {
        let e = &self.endpoint;
        let key = serde_json::json!({
            "prompt": prompt,
            "endpoint": e.descriptor(),
            "max_tokens": e.max_tokens,
            "temperature": e.temperature,
            "stop": stop,
        });
        sha256_hex(&key.to_string())
    }

    fn stops(&self, stop: &[String]) -> Vec<String> {
        if self.endpoint.stop_sequences.is_empty() {
            stop.to_vec()
        } else {
            self.endpoint.stop_sequences.clone()
        }
    }

    /// Completes `prompt`, cutting the text after the first stop sequence.
    pub fn complete(&self, prompt: &str, stop: &[String]) -> Result<CompletionRecord, GatewayError> {
        let stops = self.stops(stop);
        let start = Instant::now();
        let prompt_hash = sha256_hex(prompt);
        if self.endpoint.kind.is_mock() {
            let text = self.mock_answer(&prompt_hash, prompt)?;
            return Ok(CompletionRecord {
                prompt_hash,
                completion_tokens: Some(text.split_whitespace().count() as u64),
                prompt_tokens: Some(prompt.split_whitespace().count() as u64),
                completion: truncate_at_stop(&text, &stops),
                latency_ms: start.elapsed().as_millis() as u64,
                timestamp: now_secs(),
                endpoint: self.endpoint.descriptor(),
                cached: false,
            });
        }

        let key = self.cache_key(prompt, &stops);
        if let Some(mut hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            hit.cached = true;
            return Ok(hit);
        }
        let request = CompletionRequest {
            model: self.endpoint.model_name.clone(),
            prompt: prompt.to_string(),
            max_tokens: self.endpoint.max_tokens,
            temperature: self.endpoint.temperature,
            stop: stops.clone(),
        };
        let raw = self.send_with_retry(&request)?;
        let mut text = truncate_at_stop(&raw.text, &stops);
        // APIs drop the matched stop sequence; restore it so the end tag survives.
        if raw.finish_reason.as_deref() == Some("stop") && !stops.iter().any(|s| text.contains(s.as_str())) {
            if let Some(first) = stops.first() {
                text.push_str(first);
            }
        }
        let record = CompletionRecord {
            prompt_hash,
            completion: text,
            latency_ms: start.elapsed().as_millis() as u64,
            prompt_tokens: raw.prompt_tokens,
            completion_tokens: raw.completion_tokens,
            timestamp: now_secs(),
            endpoint: self.endpoint.descriptor(),
            cached: false,
        };
        if let Some(c) = &self.cache {
            c.put(&key, &record)?;
        }
        Ok(record)
    }

    fn pace(&self) {
        if self.endpoint.min_interval_ms == 0 {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let at = (*next).max(now);
            *next = at + Duration::from_millis(self.endpoint.min_interval_ms);
            at - now
        };
        std::thread::sleep(wait);
    }

    fn send_with_retry(&self, request: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        let transport = self.transport.as_ref().ok_or_else(|| GatewayError::Config("no transport".into()))?;
        let policy = &self.endpoint.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(policy.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16))));
            }
            self.pace();
            let result = {
                let _slot = self.slots.acquire();
                transport.send(request)
            };
            match result {
                Ok(raw) => return Ok(raw),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(e)) => last = Some(e),
            }
        }
        Err(match last.expect("at least one attempt") {
            GatewayError::RateLimited { .. } => GatewayError::RateLimited { attempts },
            GatewayError::Timeout { .. } => GatewayError::Timeout { attempts },
            other => other,
        })
    }

    fn mock_answer(&self, prompt_hash: &str, prompt: &str) -> Result<String, GatewayError> {
        let t = &self.templates;
        match self.endpoint.kind {
            EndpointKind::MockSilent => Ok("I am not sure how to approach this problem.".into()),
            EndpointKind::MockEcho => Ok(last_answer(prompt, t).unwrap_or_default()),
            EndpointKind::MockOracle => {
                let inst = self.lookup(prompt_hash)?;
                oracle_answer(&inst, t, &self.planner).map_err(GatewayError::Mock)
            }
            EndpointKind::MockPrefix => {
                let inst = self.lookup(prompt_hash)?;
                let (domain, problem, _) = payload_gold(&inst).map_err(|e| GatewayError::Mock(e.to_string()))?;
                let lines = inst.payload.reference_prefix.clone().unwrap_or_default();
                let plan = domain.parse_plan(&lines.join("\n"), &problem.objects).map_err(|e| GatewayError::Mock(e.to_string()))?;
                t.render_plan(&plan).map_err(|e| GatewayError::Mock(e.to_string()))
            }
            EndpointKind::Remote => unreachable!("remote endpoints do not use mock answers"),
        }
    }

    fn lookup(&self, prompt_hash: &str) -> Result<Arc<TestInstance>, GatewayError> {
        self.registry.lock().unwrap().get(prompt_hash).cloned().ok_or(GatewayError::UnknownPrompt)
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// The last worked answer in a prompt: from its header line through its end tag.
pub fn last_answer(prompt: &str, templates: &TemplateSet) -> Option<String> {
    let f = templates.file();
    let (end, tag) = [f.plan_end_tag.as_str(), f.state_end_tag.as_str()]
        .into_iter()
        .filter_map(|tag| prompt.rfind(tag).map(|i| (i + tag.len(), tag)))
        .max()?;
    let header = if tag == f.plan_end_tag { &f.plan_header } else { &f.state_header };
    let marker = format!("{header}\n");
    let start = prompt[..end].rfind(&marker)? + marker.len();
    Some(prompt[start..end].to_string())
}

/// Answers from the instance's ground truth rather than its prose: plans
/// come from the planner on the payload problem, states from the executor.
pub fn oracle_answer(instance: &TestInstance, templates: &TemplateSet, planner: &Planner) -> Result<String, String> {
    let domain = instance.payload.domain().map_err(|e| e.to_string())?;
    let problem = instance.payload.problem(&domain).map_err(|e| e.to_string())?;
    if instance.kind == TaskKind::PlanExecutionReasoning {
        let lines = instance.payload.actions.clone().unwrap_or_default();
        let seq = domain.parse_plan(&lines.join("\n"), &problem.objects).map_err(|e| e.to_string())?;
        let end = problem.init.execute(&seq).map_err(|e| e.to_string())?;
        return templates.render_state_answer(&end).map_err(|e| e.to_string());
    }
    let plan: Plan = planner
        .solve(&domain, &problem)
        .map_err(|e| e.to_string())?
        .plan()
        .cloned()
        .ok_or_else(|| format!("{} is unsolvable", problem.name))?;
    templates.render_plan(&plan).map_err(|e| e.to_string())
}
