use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CandidateId, Decoding, Provider, RecordKey, TokenLogProbRecord};
use crate::error::{Error, Result};

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureEntry {
    LogProbs {
        instance_id: String,
        candidate_id: CandidateId,
        logprobs: Vec<f64>,
    },
    Generation {
        instance_id: String,
        generation: String,
    },
}

impl FixtureEntry {
    pub fn write_all<W: Write>(entries: &[FixtureEntry], mut w: W) -> Result<()> {
        for e in entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<fixture>", e))?;
        }
        w.flush().map_err(|e| Error::io("<fixture>", e))
    }
}

/// Serves stored records; a pure function of the file and the key.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    records: HashMap<RecordKey, TokenLogProbRecord<f64>>,
    generations: HashMap<String, String>,
    max_in_flight: usize,
}

impl FixtureProvider {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut out = FixtureProvider {
            max_in_flight: 1,
            ..Default::default()
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<fixture>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            out.insert(entry).map_err(|e| Error::MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(out)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Result<Self> {
        let mut out = FixtureProvider {
            max_in_flight: 1,
            ..Default::default()
        };
        for e in entries {
            out.insert(e)?;
        }
        Ok(out)
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn insert(&mut self, entry: FixtureEntry) -> Result<()> {
        match entry {
            FixtureEntry::LogProbs {
                instance_id,
                candidate_id,
                logprobs,
            } => {
                let key = RecordKey::new(instance_id, candidate_id);
                let record = TokenLogProbRecord::new(key.clone(), logprobs)?;
                if self.records.insert(key.clone(), record).is_some() {
                    return Err(Error::invalid(format!(
                        "duplicate fixture key ({}, {})",
                        key.instance_id, key.candidate_id
                    )));
                }
            }
            FixtureEntry::Generation {
                instance_id,
                generation,
            } => {
                if self.generations.contains_key(&instance_id) {
                    return Err(Error::invalid(format!(
                        "duplicate fixture generation for `{instance_id}`"
                    )));
                }
                self.generations.insert(instance_id, generation);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len() + self.generations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Provider for FixtureProvider {
    fn fetch_logprobs(
        &self,
        _instruction: &str,
        continuation: &str,
        key: &RecordKey,
    ) -> Result<TokenLogProbRecord<f64>> {
        if continuation.is_empty() {
            return Err(Error::invalid("empty continuation"));
        }
        self.records
            .get(key)
            .cloned()
            .ok_or_else(|| Error::MissingFixtureKey {
                instance_id: key.instance_id.clone(),
                candidate_id: key.candidate_id.to_string(),
            })
    }

    fn generate(&self, instance_id: &str, _instruction: &str, _decoding: &Decoding) -> Result<String> {
        self.generations
            .get(instance_id)
            .cloned()
            .ok_or_else(|| Error::MissingGeneration(instance_id.to_owned()))
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
