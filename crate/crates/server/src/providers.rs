//! HTTP transports for remote embedding, evaluation and transcription
//! providers, selected by environment variables. When a variable is unset
//! the local hash embedder, mock evaluator or passthrough transcriber is
//! used instead.
//!
//! Transports are driven from blocking grading threads: each call is run to
//! completion on the runtime captured when the transport was built.

use std::sync::Arc;
use std::time::Duration;

use reqwest::header::{HeaderMap, HeaderValue, AUTHORIZATION, CONTENT_TYPE};
use tokio::runtime::Handle;
use truegrade_core::embedding::{
    Embedder, EmbedderConfig, EmbeddingRequest, EmbeddingResponse, EmbeddingTransport, HashEmbedder, RemoteEmbedder,
};
use truegrade_core::evaluation::{Evaluator, EvaluatorTransport, MockEvaluator, RemoteEvaluator, RubricWeights};
use truegrade_core::transcription::{Passthrough, RemoteTranscriber, TranscriptionProvider, TranscriptionTransport};

pub const EMBEDDING_URL: &str = "TRUEGRADE_EMBEDDING_URL";
pub const EMBEDDING_DIMENSION: &str = "TRUEGRADE_EMBEDDING_DIMENSION";
pub const EVALUATOR_URL: &str = "TRUEGRADE_EVALUATOR_URL";
pub const TRANSCRIPTION_URL: &str = "TRUEGRADE_TRANSCRIPTION_URL";
pub const API_KEY: &str = "TRUEGRADE_API_KEY";
pub const TIMEOUT_SECS: &str = "TRUEGRADE_PROVIDER_TIMEOUT_SECS";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProviderConfig {
    pub embedding_url: Option<String>,
    pub embedding_dimension: Option<usize>,
    pub evaluator_url: Option<String>,
    pub transcription_url: Option<String>,
    pub api_key: Option<String>,
    pub timeout: Option<Duration>,
}

impl ProviderConfig {
    pub fn from_env() -> Result<Self, String> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let parse = |k: &str| -> Result<Option<u64>, String> {
            var(k)
                .map(|v| v.parse::<u64>().map_err(|e| format!("{k}: {e}")))
                .transpose()
        };
        Ok(Self {
            embedding_url: var(EMBEDDING_URL),
            embedding_dimension: parse(EMBEDDING_DIMENSION)?.map(|d| d as usize),
            evaluator_url: var(EVALUATOR_URL),
            transcription_url: var(TRANSCRIPTION_URL),
            api_key: var(API_KEY),
            timeout: parse(TIMEOUT_SECS)?.map(Duration::from_secs),
        })
    }

    pub fn is_local(&self) -> bool {
        self.embedding_url.is_none() && self.evaluator_url.is_none() && self.transcription_url.is_none()
    }
}

#[derive(Clone)]
struct Http {
    client: reqwest::Client,
    runtime: Handle,
    url: String,
}

impl Http {
    fn new(config: &ProviderConfig, url: &str) -> Result<Self, String> {
        let mut headers = HeaderMap::new();
        if let Some(key) = &config.api_key {
            let value = HeaderValue::from_str(&format!("Bearer {key}")).map_err(|e| e.to_string())?;
            headers.insert(AUTHORIZATION, value);
        }
        let client = reqwest::Client::builder()
            .default_headers(headers)
            .timeout(config.timeout.unwrap_or(Duration::from_secs(30)))
            .build()
            .map_err(|e| e.to_string())?;
        let runtime = Handle::try_current().map_err(|_| "remote providers need a tokio runtime".to_string())?;
        Ok(Self {
            client,
            runtime,
            url: url.to_string(),
        })
    }

    fn post(&self, content_type: &'static str, body: Vec<u8>) -> Result<String, String> {
        let request = self
            .client
            .post(&self.url)
            .header(CONTENT_TYPE, content_type)
            .body(body);
        self.runtime.block_on(async move {
            let response = request.send().await.map_err(|e| e.to_string())?;
            let status = response.status();
            let text = response.text().await.map_err(|e| e.to_string())?;
            if !status.is_success() {
                return Err(format!("provider returned {status}: {text}"));
            }
            Ok(text)
        })
    }
}

struct HttpEmbedding(Http);

impl EmbeddingTransport for HttpEmbedding {
    fn fetch(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, String> {
        let body = serde_json::to_vec(request).map_err(|e| e.to_string())?;
        let text = self.0.post("application/json", body)?;
        serde_json::from_str(&text).map_err(|e| format!("malformed embedding reply: {e}"))
    }
}

struct HttpEvaluator(Http);

impl EvaluatorTransport for HttpEvaluator {
    fn send(&self, request_json: &str) -> Result<String, String> {
        self.0.post("application/json", request_json.as_bytes().to_vec())
    }
}

struct HttpTranscription(Http);

impl TranscriptionTransport for HttpTranscription {
    fn send(&self, blob: &[u8]) -> Result<String, String> {
        self.0.post("application/octet-stream", blob.to_vec())
    }
}

/// The three providers a service or batch run grades with.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub evaluator: Arc<dyn Evaluator>,
    pub transcriber: Arc<dyn TranscriptionProvider>,
}

impl Providers {
    /// Remote transports require a running tokio runtime; local ones do not.
    pub fn build(config: &ProviderConfig, embedder: &EmbedderConfig, weights: &RubricWeights) -> Result<Self, String> {
        let embedder: Arc<dyn Embedder> = match &config.embedding_url {
            Some(url) => {
                let dim = config
                    .embedding_dimension
                    .ok_or_else(|| format!("{EMBEDDING_DIMENSION} is required with {EMBEDDING_URL}"))?;
                Arc::new(RemoteEmbedder::new(
                    dim,
                    Arc::new(HttpEmbedding(Http::new(config, url)?)),
                ))
            }
            None => Arc::new(HashEmbedder::new(embedder.clone()).map_err(|e| e.to_string())?),
        };
        let evaluator: Arc<dyn Evaluator> = match &config.evaluator_url {
            Some(url) => Arc::new(RemoteEvaluator::new(
                Arc::new(HttpEvaluator(Http::new(config, url)?)),
                weights.category_bounds,
            )),
            None => Arc::new(MockEvaluator::new(weights.clone()).map_err(|e| e.to_string())?),
        };
        let transcriber: Arc<dyn TranscriptionProvider> = match &config.transcription_url {
            Some(url) => Arc::new(RemoteTranscriber::new(Arc::new(HttpTranscription(Http::new(
                config, url,
            )?)))),
            None => Arc::new(Passthrough),
        };
        Ok(Self {
            embedder,
            evaluator,
            transcriber,
        })
    }
}
