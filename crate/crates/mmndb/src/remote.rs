//! HTTP client for an external model server.
//!
//! `POST {endpoint}/v1/reason` with `{"prompt", "image_uri", "doc_id"}` answers
//! `{"text"}`; `POST {endpoint}/v1/embed_text` with `{"text"}` answers
//! `{"embedding": [f32]}`. Any transport problem or non-200 status yields a
//! failed answer for that document instead of aborting the query.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use mmndb_core::corpus::Document;
use mmndb_core::embedding::{EmbeddingError, QueryEncoder};
use mmndb_core::query::{render_prompt, PromptTemplate, Query};
use mmndb_core::reasoner::{parse_answer, IntermediateAnswer, Reasoner};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 16;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub prompt: PromptTemplate,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            prompt: PromptTemplate::counting(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.endpoint.trim_end_matches('/'))
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            // One connection per request: some servers stall on reused keep-alive sockets.
            .max_idle_connections_per_host(0)
            .build()
            .into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReasonRequest {
    pub prompt: String,
    pub image_uri: String,
    pub doc_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReasonResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedTextResponse {
    pub embedding: Vec<f32>,
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Sends one POST and decodes a JSON reply, mapping every failure to a message.
fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    body: &B,
) -> Result<R, String> {
    let mut response = agent
        .post(url)
        .send_json(body)
        .map_err(|e| format!("transport: {e}"))?;
    let status = response.status().as_u16();
    if status != 200 {
        return Err(format!("transport: HTTP {status}"));
    }
    response
        .body_mut()
        .read_json::<R>()
        .map_err(|e| format!("transport: bad response body: {e}"))
}

/// A reasoner served over HTTP.
pub struct RemoteReasoner {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteReasoner {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            agent: config.agent(),
            gate: Gate::new(config.max_in_flight),
            config,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

impl Reasoner for RemoteReasoner {
    fn reason(&self, query: &Query, doc: &Document) -> IntermediateAnswer {
        let request = ReasonRequest {
            prompt: render_prompt(query, &self.config.prompt),
            image_uri: doc
                .meta()
                .get("image_uri")
                .cloned()
                .unwrap_or_else(|| doc.doc_id().to_string()),
            doc_id: doc.doc_id().to_string(),
        };
        let _permit = self.gate.acquire();
        match post_json::<_, ReasonResponse>(&self.agent, &self.config.url("/v1/reason"), &request) {
            Ok(reply) => parse_answer(doc.doc_id(), &reply.text),
            Err(reason) => IntermediateAnswer::failed(doc.doc_id(), reason),
        }
    }
}

/// Query encoder served over HTTP, for stores built by an external embedding model.
pub struct RemoteQueryEncoder {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteQueryEncoder {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            agent: config.agent(),
            config,
        }
    }
}

impl QueryEncoder for RemoteQueryEncoder {
    fn encode(&self, query: &Query) -> Result<Vec<f32>, EmbeddingError> {
        let request = EmbedTextRequest {
            text: query.raw_text().to_string(),
        };
        post_json::<_, EmbedTextResponse>(&self.agent, &self.config.url("/v1/embed_text"), &request)
            .map(|r| r.embedding)
            .map_err(EmbeddingError::Encoder)
    }
}
