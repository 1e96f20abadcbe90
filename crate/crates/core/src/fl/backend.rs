use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FlError, PromptSpec};

pub struct LlmRequest<'a> {
    pub case_id: &'a str,
    pub prompt: &'a PromptSpec,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlmResponse {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
    /// The output cap was hit.
    pub truncated: bool,
    /// Server-reported generation time, when known.
    pub seconds: Option<f64>,
}

/// One synchronous request/response exchange.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, FlError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full URL of an OpenAI-style chat completions route.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
    pub max_output_tokens: u32,
    pub parallelism: usize,
    pub timeout_secs: u64,
    /// Responses file for the mock backend.
    pub mock_responses: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: String::new(),
            api_key_env: None,
            temperature: None,
            top_p: None,
            top_k: None,
            max_output_tokens: 2048,
            parallelism: 1,
            timeout_secs: 600,
            mock_responses: None,
        }
    }
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<Self, FlError> {
        let text = std::fs::read_to_string(path).map_err(|e| FlError::Backend(format!("{}: {e}", path.display())))?;
        let mut cfg: BackendConfig = serde_json::from_str(&text).map_err(|e| FlError::Backend(format!("{}: {e}", path.display())))?;
        if let (Some(p), Some(dir)) = (&cfg.mock_responses, path.parent()) {
            if p.is_relative() {
                cfg.mock_responses = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn build(&self) -> Result<Box<dyn LlmBackend>, FlError> {
        Ok(match self.kind {
            BackendKind::Remote => Box::new(RemoteBackend::new(self.clone())),
            BackendKind::Mock => {
                let p = self
                    .mock_responses
                    .as_ref()
                    .ok_or_else(|| FlError::Backend("mock backend needs `mock_responses`".into()))?;
                Box::new(MockBackend::from_file(p)?)
            }
        })
    }
}

pub struct RemoteBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Self { cfg, agent }
    }

    fn body(&self, prompt: &str) -> Value {
        let mut b = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.cfg.max_output_tokens,
        });
        if let Some(t) = self.cfg.temperature {
            b["temperature"] = json!(t);
        }
        if let Some(p) = self.cfg.top_p {
            b["top_p"] = json!(p);
        }
        if let Some(k) = self.cfg.top_k {
            b["top_k"] = json!(k);
        }
        b
    }
}

impl LlmBackend for RemoteBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, FlError> {
        let mut r = self.agent.post(&self.cfg.endpoint);
        if let Some(var) = &self.cfg.api_key_env {
            if let Ok(key) = std::env::var(var) {
                r = r.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let v: Value = match r.send_json(self.body(&req.prompt.text)) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json()
                .map_err(|e| FlError::Backend(format!("bad response body: {e}")))?,
            Err(ureq::Error::Timeout(_)) => return Err(FlError::BackendTimeout),
            Err(ureq::Error::StatusCode(c)) if (400..500).contains(&c) => {
                return Err(FlError::BackendRefusal(format!("HTTP {c}")))
            }
            Err(e) => return Err(FlError::Backend(e.to_string())),
        };
        let choice = &v["choices"][0];
        let finish = choice["finish_reason"].as_str().unwrap_or("");
        let msg = &choice["message"];
        if finish == "content_filter" || (msg["content"].is_null() && msg["refusal"].is_string()) {
            return Err(FlError::BackendRefusal(msg["refusal"].as_str().unwrap_or(finish).to_string()));
        }
        Ok(LlmResponse {
            text: msg["content"].as_str().unwrap_or_default().to_string(),
            input_tokens: v["usage"]["prompt_tokens"].as_u64(),
            output_tokens: v["usage"]["completion_tokens"].as_u64(),
            truncated: finish == "length",
            seconds: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaseResponse {
    Same(String),
    ByGranularity(BTreeMap<String, String>),
}

/// Canned answers, looked up by prompt hash, then case id, then a default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockResponses {
    pub by_prompt_hash: BTreeMap<String, String>,
    pub by_case: BTreeMap<String, CaseResponse>,
    pub default: Option<String>,
}

pub struct MockBackend {
    responses: MockResponses,
}

impl MockBackend {
    pub fn new(responses: MockResponses) -> Self {
        Self { responses }
    }

    pub fn from_file(path: &Path) -> Result<Self, FlError> {
        let text = std::fs::read_to_string(path).map_err(|e| FlError::Backend(format!("{}: {e}", path.display())))?;
        let responses = serde_json::from_str(&text).map_err(|e| FlError::Backend(format!("{}: {e}", path.display())))?;
        Ok(Self::new(responses))
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, FlError> {
        let r = &self.responses;
        let text = r
            .by_prompt_hash
            .get(&req.prompt.hash())
            .cloned()
            .or_else(|| match r.by_case.get(req.case_id) {
                Some(CaseResponse::Same(s)) => Some(s.clone()),
                Some(CaseResponse::ByGranularity(m)) => m.get(req.prompt.granularity.as_str()).cloned(),
                None => None,
            })
            .or_else(|| r.default.clone())
            .ok_or_else(|| FlError::Backend(format!("mock has no answer for case `{}`", req.case_id)))?;
        Ok(LlmResponse { text, ..Default::default() })
    }
}
