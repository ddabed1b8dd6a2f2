//! Chat-completion client for multimodal endpoints and deterministic mock
//! models.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use base64::Engine as _;
use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instance::{Instance, Modality, TaskKind, LETTERS};
use crate::logic::{self, Atom, KnowledgeBase};
use crate::prompt::{Part, PromptBundle, PromptMode};
use crate::render::{render_text, AssetRef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub parallel_requests: usize,
    pub cache_dir: Option<PathBuf>,
    pub supports_audio: bool,
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: String::new(),
            api_key_env: None,
            timeout_secs: 120,
            max_retries: 3,
            parallel_requests: 4,
            cache_dir: Some(PathBuf::from("cache")),
            supports_audio: true,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.parallel_requests == 0 {
            return Err(GatewayError::Config("parallel_requests must be at least 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::Config("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn identity(&self) -> String {
        format!("{}|{}", self.base_url.trim_end_matches('/'), self.model_name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: Option<u64>,
    pub completion: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: Option<String>,
    pub latency_ms: u64,
    pub token_counts: TokenCounts,
    pub cached: bool,
}

impl ModelResponse {
    /// A locally produced reply with no latency or token counts.
    pub fn from_text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: Some("stop".into()),
            latency_ms: 0,
            token_counts: TokenCounts::default(),
            cached: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    ProtocolError(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
    #[error("endpoint does not accept audio parts")]
    AudioUnsupported,
    #[error("transport: {0}")]
    Transport(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            GatewayError::HttpError { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that answers prompt bundles.
pub trait ModelBackend: Send + Sync {
    fn identity(&self) -> String;
    fn complete(&self, instance: &Instance, bundle: &PromptBundle) -> Result<ModelResponse, GatewayError>;
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: EndpointConfig,
    asset_root: PathBuf,
    client: reqwest::blocking::Client,
    permits: Semaphore,
    network_calls: AtomicUsize,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig, asset_root: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            permits: Semaphore::new(config.parallel_requests),
            config,
            asset_root: asset_root.into(),
            client,
            network_calls: AtomicUsize::new(0),
        })
    }

    /// HTTP requests sent so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, bundle: &PromptBundle) -> String {
        let mut h = Sha256::new();
        h.update(self.config.identity().as_bytes());
        h.update(b"\n");
        h.update(bundle.to_canonical_json().as_bytes());
        hex::encode(h.finalize())
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.config.cache_dir.as_ref().map(|d| d.join(format!("{key}.response")))
    }

    fn read_cache(&self, key: &str) -> Option<ModelResponse> {
        let path = self.cache_path(key)?;
        let bytes = std::fs::read(path).ok()?;
        let mut resp: ModelResponse = serde_json::from_slice(&bytes).ok()?;
        resp.cached = true;
        Some(resp)
    }

    fn write_cache(&self, key: &str, resp: &ModelResponse) -> Result<(), GatewayError> {
        let Some(path) = self.cache_path(key) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache file has a parent");
        std::fs::create_dir_all(dir)?;
        static SEQ: AtomicUsize = AtomicUsize::new(0);
        let seq = SEQ.fetch_add(1, Ordering::SeqCst);
        let tmp = dir.join(format!(".{key}.{}.{seq}.tmp", std::process::id()));
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(resp).expect("response serializes"))?;
        f.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    fn asset_part(&self, asset: &AssetRef, kind: &str) -> Result<Value, GatewayError> {
        let bytes = std::fs::read(self.asset_root.join(&asset.path))?;
        Ok(json!({
            "type": kind,
            "data": base64::engine::general_purpose::STANDARD.encode(bytes),
            "media_type": asset.format.media_type(),
        }))
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Result<Value, GatewayError> {
        let mut messages = Vec::with_capacity(bundle.messages.len());
        for msg in &bundle.messages {
            let mut content = Vec::with_capacity(msg.parts.len());
            for part in &msg.parts {
                content.push(match part {
                    Part::Text { text } => json!({"type": "text", "text": text}),
                    Part::Image { asset, .. } => self.asset_part(asset, "image")?,
                    Part::Audio { asset, .. } => {
                        if !self.config.supports_audio {
                            return Err(GatewayError::AudioUnsupported);
                        }
                        self.asset_part(asset, "audio")?
                    }
                });
            }
            messages.push(json!({"role": msg.role, "content": content}));
        }
        Ok(json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": 0,
            "do_sample": false,
            "max_tokens": bundle.decoding.max_new_tokens,
        }))
    }

    fn send_once(&self, body: &Value) -> Result<ModelResponse, GatewayError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(url).json(body);
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var).map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(GatewayError::HttpError {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| GatewayError::ProtocolError(e.to_string()))?;
        let mut parsed = parse_reply(&value)?;
        parsed.latency_ms = started.elapsed().as_millis() as u64;
        Ok(parsed)
    }
}

/// Accepts `{"text": ...}` or the `choices[0].message.content` shape.
pub fn parse_reply(value: &Value) -> Result<ModelResponse, GatewayError> {
    let choice = value.pointer("/choices/0");
    let text = value
        .get("text")
        .and_then(Value::as_str)
        .or_else(|| choice.and_then(|c| c.pointer("/message/content")).and_then(Value::as_str))
        .ok_or_else(|| GatewayError::ProtocolError("reply has no text field".into()))?;
    let finish_reason = value
        .get("finish_reason")
        .or_else(|| choice.and_then(|c| c.get("finish_reason")))
        .and_then(Value::as_str)
        .map(str::to_string);
    let usage = value.get("usage");
    let count = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64);
    Ok(ModelResponse {
        text: text.to_string(),
        finish_reason,
        latency_ms: 0,
        token_counts: TokenCounts {
            prompt: count("prompt_tokens"),
            completion: count("completion_tokens"),
        },
        cached: false,
    })
}

/// Sends `bundle`, consulting and filling the response cache.
pub fn complete(backend: &HttpBackend, bundle: &PromptBundle) -> Result<ModelResponse, GatewayError> {
    let key = backend.cache_key(bundle);
    if let Some(hit) = backend.read_cache(&key) {
        return Ok(hit);
    }
    let body = backend.request_body(bundle)?;
    let _permit = backend.permits.acquire();
    let mut attempt = 0u32;
    loop {
        match backend.send_once(&body) {
            Ok(resp) => {
                backend.write_cache(&key, &resp)?;
                return Ok(resp);
            }
            Err(e) if e.retryable() => {
                if attempt >= backend.config.max_retries {
                    return Err(if backend.config.max_retries == 0 {
                        e
                    } else {
                        GatewayError::RetriesExhausted {
                            attempts: attempt + 1,
                            last: Box::new(e),
                        }
                    });
                }
                std::thread::sleep(Duration::from_millis(backend.config.backoff_ms << attempt.min(10)));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

impl ModelBackend for HttpBackend {
    fn identity(&self) -> String {
        self.config.identity()
    }

    fn complete(&self, _instance: &Instance, bundle: &PromptBundle) -> Result<ModelResponse, GatewayError> {
        complete(self, bundle)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "modalities", rename_all = "snake_case")]
pub enum MockKind {
    UniformRandom,
    Oracle,
    ModalityDrop(BTreeSet<Modality>),
    ModalityPreference(Vec<Modality>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockSpec {
    pub kind: MockKind,
    pub seed: u64,
}

impl MockSpec {
    pub fn new(kind: MockKind, seed: u64) -> Result<Self, GatewayError> {
        let spec = Self { kind, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match &self.kind {
            MockKind::ModalityDrop(set) if set.len() >= Modality::ALL.len() => {
                Err(GatewayError::Config("cannot drop every modality".into()))
            }
            MockKind::ModalityPreference(list) => {
                let distinct: BTreeSet<_> = list.iter().collect();
                if list.is_empty() || distinct.len() != list.len() {
                    Err(GatewayError::Config("preference list must be non-empty and distinct".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        let mods = |it: &mut dyn Iterator<Item = &Modality>| it.map(|m| m.letter()).collect::<String>();
        match &self.kind {
            MockKind::UniformRandom => format!("mock:uniform:{}", self.seed),
            MockKind::Oracle => format!("mock:oracle:{}", self.seed),
            MockKind::ModalityDrop(s) => format!("mock:drop-{}:{}", mods(&mut s.iter()), self.seed),
            MockKind::ModalityPreference(l) => format!("mock:prefer-{}:{}", mods(&mut l.iter()), self.seed),
        }
    }
}

fn mock_rng(spec: &MockSpec, instance: &Instance, mode: PromptMode) -> ChaCha8Rng {
    let material = format!("{}|{}|{:?}", spec.seed, instance.id, mode);
    let digest = Sha256::digest(material.as_bytes());
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

/// Options entailed by the facts of `modalities`. Exclusion groups are not
/// enforced, so conflicting conclusions across blocks all count.
fn entailed_options(instance: &Instance, modalities: &BTreeSet<Modality>) -> Vec<usize> {
    let kb = KnowledgeBase::new(instance.kb_for(modalities).facts, instance.rules.clone());
    let Ok(closure) = logic::close(&kb) else {
        return Vec::new();
    };
    instance
        .option_atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| closure.contains(*a))
        .map(|(i, _)| i)
        .collect()
}

fn list_facts(instance: &Instance, visible: &BTreeSet<Modality>) -> String {
    let block = |m: Modality, label: &str| {
        let facts: Vec<&Atom> = instance
            .modality_facts
            .get(&m)
            .filter(|_| visible.contains(&m))
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        let lines = if facts.is_empty() {
            "- none".to_string()
        } else {
            facts.iter().map(|a| format!("- {}.", render_text(a))).collect::<Vec<_>>().join("\n")
        };
        format!("Facts from the {label}:\n{lines}")
    };
    [
        block(Modality::Vision, "image"),
        block(Modality::Audio, "audio"),
        block(Modality::Text, "text"),
    ]
    .join("\n\n")
}

/// Deterministic stand-in model; a pure function of (spec, instance, mode).
pub fn mock_complete(spec: &MockSpec, instance: &Instance, bundle: &PromptBundle) -> ModelResponse {
    let mut rng = mock_rng(spec, instance, bundle.mode);
    let guess = |rng: &mut ChaCha8Rng| rng.random_range(0..LETTERS.len());
    let all: BTreeSet<Modality> = Modality::ALL.into_iter().collect();
    let visible: BTreeSet<Modality> = match &spec.kind {
        MockKind::ModalityDrop(dropped) => all.difference(dropped).copied().collect(),
        _ => all.clone(),
    };

    if bundle.mode == PromptMode::TwoStepExtract {
        return ModelResponse::from_text(list_facts(instance, &visible));
    }

    let choice = match (&spec.kind, instance.task) {
        (MockKind::UniformRandom, _) => guess(&mut rng),
        (_, TaskKind::Recognition) => {
            let seen: BTreeSet<Atom> = instance
                .modality_facts
                .iter()
                .filter(|(m, _)| visible.contains(m))
                .flat_map(|(_, v)| v.iter().cloned())
                .collect();
            instance
                .option_atoms
                .iter()
                .position(|a| seen.contains(a))
                .unwrap_or_else(|| guess(&mut rng))
        }
        (MockKind::ModalityPreference(order), TaskKind::Reasoning) => order
            .iter()
            .find_map(|&m| entailed_options(instance, &BTreeSet::from([m])).first().copied())
            .or_else(|| entailed_options(instance, &all).first().copied())
            .unwrap_or_else(|| guess(&mut rng)),
        (_, TaskKind::Reasoning) => entailed_options(instance, &visible)
            .first()
            .copied()
            .unwrap_or_else(|| guess(&mut rng)),
    };
    ModelResponse::from_text(format!("Answer: {}", LETTERS[choice]))
}

pub struct MockBackend {
    pub spec: MockSpec,
}

impl ModelBackend for MockBackend {
    fn identity(&self) -> String {
        self.spec.label()
    }

    fn complete(&self, instance: &Instance, bundle: &PromptBundle) -> Result<ModelResponse, GatewayError> {
        Ok(mock_complete(&self.spec, instance, bundle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factory::{generate, generate_recognition, GenerationSpec};
    use crate::instance::InteractionType;
    use crate::prompt::build;
    use crate::render::{render_instances, AssetStore, RenderConfig};
    use crate::vocab::VocabularyConfig;

    fn bundle_for(inst: &Instance, mode: PromptMode) -> PromptBundle {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let r = render_instances(std::slice::from_ref(inst), &store, &RenderConfig::default()).unwrap();
        build(&r[0], inst, mode, 0, None).unwrap()
    }

    #[test]
    fn oracle_answers_correctly() {
        for t in InteractionType::ALL.into_iter().filter(|t| *t != InteractionType::Contradictory) {
            for seed in 0..20 {
                let inst = generate(&GenerationSpec::new(t), seed).unwrap();
                let b = bundle_for(&inst, PromptMode::Reasoning);
                let spec = MockSpec::new(MockKind::Oracle, 0).unwrap();
                let r = mock_complete(&spec, &inst, &b);
                assert_eq!(r.text, format!("Answer: {}", inst.correct_letter().unwrap()), "{t} {seed}");
            }
        }
    }

    #[test]
    fn preference_selects_modality_path() {
        let inst = generate(&GenerationSpec::new(InteractionType::Contradictory), 1).unwrap();
        let b = bundle_for(&inst, PromptMode::Reasoning);
        for m in Modality::ALL {
            let spec = MockSpec::new(MockKind::ModalityPreference(vec![m]), 0).unwrap();
            let letter = mock_complete(&spec, &inst, &b).text.chars().last().unwrap();
            let idx = LETTERS.iter().position(|&l| l == letter).unwrap();
            let prov = inst.option_provenance[idx].modalities().unwrap();
            assert_eq!(prov, &BTreeSet::from([m]));
        }
    }

    #[test]
    fn recognition_oracle_and_extract_listing() {
        let base = generate(&GenerationSpec::new(InteractionType::Independence), 0).unwrap();
        let rec = generate_recognition(&base, &VocabularyConfig::default(), 0).unwrap();
        let b = bundle_for(&rec, PromptMode::Recognition);
        let spec = MockSpec::new(MockKind::Oracle, 0).unwrap();
        assert_eq!(mock_complete(&spec, &rec, &b).text, format!("Answer: {}", rec.correct_letter().unwrap()));

        let e = bundle_for(&base, PromptMode::TwoStepExtract);
        let listing = mock_complete(&spec, &base, &e).text;
        assert!(listing.starts_with("Facts from the image:"));
        for p in base.placed_facts() {
            assert!(listing.contains(&format!("- {}.", render_text(&p.atom))));
        }
    }

    #[test]
    fn mock_is_deterministic() {
        let inst = generate(&GenerationSpec::new(InteractionType::Equivalence), 9).unwrap();
        let b = bundle_for(&inst, PromptMode::Reasoning);
        let spec = MockSpec::new(MockKind::UniformRandom, 3).unwrap();
        assert_eq!(mock_complete(&spec, &inst, &b), mock_complete(&spec, &inst, &b));
    }

    #[test]
    fn invalid_mock_specs() {
        assert!(MockSpec::new(MockKind::ModalityDrop(Modality::ALL.into_iter().collect()), 0).is_err());
        assert!(MockSpec::new(MockKind::ModalityPreference(vec![]), 0).is_err());
        assert!(MockSpec::new(MockKind::ModalityPreference(vec![Modality::Text, Modality::Text]), 0).is_err());
    }

    #[test]
    fn reply_shapes() {
        assert_eq!(parse_reply(&json!({"text": "Answer: B"})).unwrap().text, "Answer: B");
        let openai = json!({"choices": [{"message": {"content": "B"}, "finish_reason": "stop"}], "usage": {"prompt_tokens": 5, "completion_tokens": 1}});
        let r = parse_reply(&openai).unwrap();
        assert_eq!(r.text, "B");
        assert_eq!(r.finish_reason.as_deref(), Some("stop"));
        assert_eq!(r.token_counts.completion, Some(1));
        assert!(matches!(parse_reply(&json!({"output": 1})), Err(GatewayError::ProtocolError(_))));
    }

    #[test]
    fn audio_down_conversion_refused() {
        let inst = generate(&GenerationSpec::new(InteractionType::Equivalence), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let r = render_instances(std::slice::from_ref(&inst), &store, &RenderConfig::default()).unwrap();
        let b = build(&r[0], &inst, PromptMode::Reasoning, 0, None).unwrap();
        let cfg = EndpointConfig {
            model_name: "m".into(),
            supports_audio: false,
            cache_dir: None,
            ..EndpointConfig::default()
        };
        let backend = HttpBackend::new(cfg.clone(), dir.path()).unwrap();
        assert!(matches!(backend.request_body(&b), Err(GatewayError::AudioUnsupported)));
        let backend = HttpBackend::new(EndpointConfig { supports_audio: true, ..cfg }, dir.path()).unwrap();
        let body = backend.request_body(&b).unwrap();
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["max_tokens"], 1024);
        let kinds: Vec<&str> = body["messages"][1]["content"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["type"].as_str().unwrap())
            .collect();
        assert_eq!(kinds.iter().filter(|k| **k == "image").count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == "audio").count(), 1);
    }
}
