use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Decoding, Provider, ProviderConfig, ProviderMode, RecordKey, TokenLogProbRecord};
use crate::error::{Error, Result};

pub const LOGPROB_ROUTE: &str = "logprobs";
pub const GENERATE_ROUTE: &str = "generate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRequest {
    pub context: String,
    pub continuation: String,
}

/// Arrays cover the continuation only and have equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub context: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// HTTP client for a scoring endpoint. Blocking; concurrency comes from
/// the caller's worker pool, bounded by `max_in_flight`.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    client: Client,
    logprob_url: String,
    generate_url: String,
    retries: u32,
    bearer_token: Option<String>,
    max_in_flight: usize,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self> {
        let ProviderMode::Remote { endpoint } = &config.mode else {
            return Err(Error::invalid("remote provider needs a remote endpoint"));
        };
        let base = endpoint.trim_end_matches('/');
        let client = Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| Error::Provider(e.to_string()))?;
        Ok(RemoteProvider {
            client,
            logprob_url: format!("{base}/{LOGPROB_ROUTE}"),
            generate_url: format!("{base}/{GENERATE_ROUTE}"),
            retries: config.retries,
            bearer_token: config.bearer_token.clone(),
            max_in_flight: config.max_in_flight.max(1),
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            match self.try_post(url, body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::debug!("{url}: attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Provider(format!(
            "{url}: giving up after {} attempts: {last}",
            self.retries + 1
        )))
    }

    fn try_post<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> std::result::Result<R, Attempt> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Provider(format!("{url}: status {status}"))));
        }
        let bytes = resp.bytes().map_err(|e| Attempt::Retry(e.to_string()))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Attempt::Fatal(Error::MalformedResponse(format!("{url}: {e}"))))
    }
}

impl Provider for RemoteProvider {
    fn fetch_logprobs(
        &self,
        instruction: &str,
        continuation: &str,
        key: &RecordKey,
    ) -> Result<TokenLogProbRecord<f64>> {
        if continuation.is_empty() {
            return Err(Error::invalid("empty continuation"));
        }
        let resp: LogProbResponse = self.post(
            &self.logprob_url,
            &LogProbRequest {
                context: instruction.to_owned(),
                continuation: continuation.to_owned(),
            },
        )?;
        if resp.tokens.len() != resp.logprobs.len() {
            return Err(Error::MalformedResponse(format!(
                "{} tokens but {} logprobs",
                resp.tokens.len(),
                resp.logprobs.len()
            )));
        }
        if resp.logprobs.is_empty() {
            return Err(Error::MalformedResponse("no continuation tokens".into()));
        }
        TokenLogProbRecord::new(key.clone(), resp.logprobs)
    }

    fn generate(&self, _instance_id: &str, instruction: &str, decoding: &Decoding) -> Result<String> {
        let resp: GenerateResponse = self.post(
            &self.generate_url,
            &GenerateRequest {
                context: instruction.to_owned(),
                max_tokens: decoding.max_tokens,
                temperature: decoding.temperature,
            },
        )?;
        Ok(resp.text)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
