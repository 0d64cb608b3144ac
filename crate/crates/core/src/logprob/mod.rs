//! Conditional token log-probabilities and generations.
//!
//! Tokenization belongs to the serving side; this crate never tokenizes. A
//! [`Provider`] either talks to a remote endpoint ([`RemoteProvider`]) or
//! serves stored records from a fixture file ([`FixtureProvider`]).

mod fixture;
mod remote;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

pub use fixture::{FixtureEntry, FixtureProvider};
pub use remote::{
    GenerateRequest, GenerateResponse, LogProbRequest, LogProbResponse, RemoteProvider,
    GENERATE_ROUTE, LOGPROB_ROUTE,
};

/// Which continuation of an instance a record scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CandidateId {
    Gold,
    Distractor(usize),
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateId::Gold => f.write_str("gold"),
            CandidateId::Distractor(i) => write!(f, "distractor:{i}"),
        }
    }
}

impl FromStr for CandidateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "gold" {
            return Ok(CandidateId::Gold);
        }
        s.strip_prefix("distractor:")
            .and_then(|i| i.parse().ok())
            .map(CandidateId::Distractor)
            .ok_or_else(|| Error::invalid(format!("bad candidate id `{s}`")))
    }
}

impl Serialize for CandidateId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CandidateId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub instance_id: String,
    pub candidate_id: CandidateId,
}

impl RecordKey {
    pub fn new(instance_id: impl Into<String>, candidate_id: CandidateId) -> Self {
        RecordKey {
            instance_id: instance_id.into(),
            candidate_id,
        }
    }
}

/// Per-token natural-log probabilities `log p(g_t | i, g_<t)` of one
/// continuation. Always non-empty, every entry `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TokenLogProbRecord<T: Scalar = f64> {
    pub instance_id: String,
    pub candidate_id: CandidateId,
    logprobs: Vec<T>,
}

impl<T: Scalar> TokenLogProbRecord<T> {
    pub fn new(key: RecordKey, logprobs: Vec<T>) -> Result<Self> {
        if logprobs.is_empty() {
            return Err(Error::invalid(format!(
                "empty logprobs for ({}, {})",
                key.instance_id, key.candidate_id
            )));
        }
        for &lp in &logprobs {
            if lp.is_nan() || lp > T::zero() {
                return Err(Error::PositiveLogProb {
                    instance_id: key.instance_id,
                    candidate_id: key.candidate_id.to_string(),
                    value: lp.to_f64_lossy(),
                });
            }
        }
        Ok(TokenLogProbRecord {
            instance_id: key.instance_id,
            candidate_id: key.candidate_id,
            logprobs,
        })
    }

    pub fn logprobs(&self) -> &[T] {
        &self.logprobs
    }

    /// Number of continuation tokens.
    pub fn token_count(&self) -> usize {
        self.logprobs.len()
    }

    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.instance_id.clone(), self.candidate_id)
    }

    pub fn cast<U: Scalar>(&self) -> TokenLogProbRecord<U> {
        TokenLogProbRecord {
            instance_id: self.instance_id.clone(),
            candidate_id: self.candidate_id,
            logprobs: self
                .logprobs
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Decoding settings for free-form generation. Defaults to greedy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            max_tokens: 512,
            temperature: 0.0,
        }
    }
}

/// The gateway to a language model. Implementations must be callable from
/// many threads at once.
pub trait Provider: Send + Sync {
    fn fetch_logprobs(
        &self,
        instruction: &str,
        continuation: &str,
        key: &RecordKey,
    ) -> Result<TokenLogProbRecord<f64>>;

    fn generate(&self, instance_id: &str, instruction: &str, decoding: &Decoding) -> Result<String>;

    /// Upper bound on concurrent requests callers should issue.
    fn max_in_flight(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProviderMode {
    /// Base URL; requests go to `{endpoint}/logprobs` and `{endpoint}/generate`.
    Remote { endpoint: String },
    Fixture { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(flatten)]
    pub mode: ProviderMode,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Passed through as `Authorization: Bearer ...`. Never serialized.
    #[serde(skip)]
    pub bearer_token: Option<String>,
}

impl ProviderConfig {
    pub fn fixture(path: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            mode: ProviderMode::Fixture { path: path.into() },
            max_in_flight: 8,
            timeout_ms: 30_000,
            retries: 2,
            bearer_token: None,
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        ProviderConfig {
            mode: ProviderMode::Remote {
                endpoint: endpoint.into(),
            },
            ..Self::fixture("")
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn build(&self) -> Result<Box<dyn Provider>> {
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be positive"));
        }
        Ok(match &self.mode {
            ProviderMode::Fixture { path } => {
                Box::new(FixtureProvider::load(path)?.with_max_in_flight(self.max_in_flight))
            }
            ProviderMode::Remote { .. } => Box::new(RemoteProvider::new(self)?),
        })
    }
}
