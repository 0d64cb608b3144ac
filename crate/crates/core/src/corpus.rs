//! Ability-tagged instruction corpora: file format, validation,
//! deduplication, uniform sampling and the volume schedule.
//!
//! A corpus file is UTF-8 JSON lines. The first line declares the catalog:
//!
//! ```text
//! {"catalog": ["code_generation", "ethics", ...]}
//! ```
//!
//! and every following non-blank line is one instance:
//!
//! ```text
//! {"id": "q1", "ability": "ethics", "kind": "open_ended", "split": "test",
//!  "instruction": "...", "gold": "...",
//!  "distractors": [{"text": "...", "grain": "fine"}]}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_without_replacement, SplitMix64};
use crate::text::normalize;

/// Name of an ability. Ordering is lexicographic by name and is the
/// catalog order used for every tie-break in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AbilityId(String);

impl AbilityId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Catalog("empty ability name".into()));
        }
        Ok(AbilityId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AbilityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for AbilityId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AbilityId::new(s)
    }
}

/// The ten in-domain abilities.
pub const DEFAULT_ABILITIES: [&str; 10] = [
    "stem_biology",
    "humanity_history",
    "code_generation",
    "creative_writing",
    "chinese",
    "dialogue_understanding",
    "roleplay_chat",
    "logical_reasoning",
    "cot_grad_math",
    "ethics",
];

/// Sorted, duplicate-free set of abilities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AbilityId>", into = "Vec<AbilityId>")]
pub struct Catalog(Vec<AbilityId>);

impl Catalog {
    pub fn new(abilities: impl IntoIterator<Item = AbilityId>) -> Result<Self> {
        let mut v: Vec<AbilityId> = abilities.into_iter().collect();
        v.sort();
        for w in v.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Catalog(format!("duplicate ability `{}`", w[0])));
            }
        }
        Ok(Catalog(v))
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Catalog::new(
            names
                .iter()
                .map(|n| AbilityId::new(n.as_ref()))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn default_ten() -> Self {
        Catalog::from_names(&DEFAULT_ABILITIES).expect("static catalog is valid")
    }

    pub fn contains(&self, a: &AbilityId) -> bool {
        self.0.binary_search(a).is_ok()
    }

    pub fn get(&self, name: &str) -> Option<&AbilityId> {
        self.0
            .binary_search_by(|a| a.as_str().cmp(name))
            .ok()
            .map(|i| &self.0[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AbilityId> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[AbilityId] {
        &self.0
    }
}

impl TryFrom<Vec<AbilityId>> for Catalog {
    type Error = Error;
    fn try_from(v: Vec<AbilityId>) -> Result<Self> {
        Catalog::new(v)
    }
}

impl From<Catalog> for Vec<AbilityId> {
    fn from(c: Catalog) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    ExactMatch,
    OpenEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Fine: subtle edits to numbers, operators or terms. Coarse: fluent text
/// that ignores the instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grain {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distractor {
    pub text: String,
    pub grain: Grain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionInstance {
    pub id: String,
    pub ability: AbilityId,
    pub kind: InstanceKind,
    pub split: Split,
    pub instruction: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distractors: Vec<Distractor>,
}

impl InstructionInstance {
    /// Per-instance checks that do not need the rest of the corpus.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if normalize(&self.instruction).is_empty() {
            return Err("empty instruction".into());
        }
        let gold = normalize(&self.gold);
        if gold.is_empty() {
            return Err("empty gold".into());
        }
        for (i, d) in self.distractors.iter().enumerate() {
            let text = normalize(&d.text);
            if text.is_empty() {
                return Err(format!("distractor {i} is empty"));
            }
            if text == gold {
                return Err(format!("distractor {i} equals the gold text"));
            }
        }
        Ok(())
    }

    fn dedup_key(&self) -> (String, String) {
        (normalize(&self.instruction), normalize(&self.gold))
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Header {
    catalog: Catalog,
}

/// A validated, deduplicated, immutable corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    catalog: Catalog,
    instances: Vec<InstructionInstance>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-parsed instances. Every instance must be
    /// valid; duplicates by normalized (instruction, gold) are dropped, first
    /// occurrence wins. Returns the dropped ids.
    pub fn new(
        catalog: Catalog,
        instances: Vec<InstructionInstance>,
    ) -> Result<(Self, Vec<String>)> {
        let mut kept = Vec::with_capacity(instances.len());
        let mut seen_text = HashSet::new();
        let mut seen_id = HashSet::new();
        let mut dropped = Vec::new();
        for (i, inst) in instances.into_iter().enumerate() {
            if !catalog.contains(&inst.ability) {
                return Err(Error::UnknownAbility {
                    line: i + 1,
                    name: inst.ability.to_string(),
                });
            }
            inst.validate()
                .map_err(|reason| Error::MalformedLine { line: i + 1, reason })?;
            if !seen_id.insert(inst.id.clone()) {
                return Err(Error::DuplicateId { line: i + 1, id: inst.id });
            }
            if !seen_text.insert(inst.dedup_key()) {
                dropped.push(inst.id);
                continue;
            }
            kept.push(inst);
        }
        let by_id = kept
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id.clone(), i))
            .collect();
        Ok((
            Corpus {
                catalog,
                instances: kept,
                by_id,
            },
            dropped,
        ))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn instances(&self) -> &[InstructionInstance] {
        &self.instances
    }

    pub fn get(&self, id: &str) -> Option<&InstructionInstance> {
        self.by_id.get(id).map(|&i| &self.instances[i])
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &InstructionInstance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    /// Train ids of one ability, in file order.
    pub fn train_ids(&self, ability: &AbilityId) -> Vec<&str> {
        self.instances
            .iter()
            .filter(|i| i.split == Split::Train && &i.ability == ability)
            .map(|i| i.id.as_str())
            .collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for inst in &self.instances {
            *out.entry(inst.split).or_insert(0) += 1;
        }
        out
    }

    pub fn counts(&self) -> BTreeMap<Split, BTreeMap<AbilityId, usize>> {
        let mut out: BTreeMap<Split, BTreeMap<AbilityId, usize>> = BTreeMap::new();
        for inst in &self.instances {
            *out.entry(inst.split)
                .or_default()
                .entry(inst.ability.clone())
                .or_insert(0) += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Fail on the first malformed line instead of skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedLine>,
    /// Ids dropped as normalized-text duplicates of an earlier instance.
    pub duplicates: Vec<String>,
}

pub fn load_corpus(path: impl AsRef<Path>, opts: LoadOptions) -> Result<(Corpus, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(reader: R, opts: LoadOptions) -> Result<(Corpus, LoadReport)> {
    let mut lines = reader.lines().enumerate();
    let catalog = loop {
        match lines.next() {
            None => return Err(Error::Catalog("missing catalog header line".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io("<corpus>", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let header: Header = serde_json::from_str(&line).map_err(|e| {
                    Error::Catalog(format!("line {}: bad catalog header: {e}", i + 1))
                })?;
                break header.catalog;
            }
        }
    };

    let mut report = LoadReport::default();
    let mut accepted = Vec::new();
    let mut id_lines: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let parsed = serde_json::from_str::<InstructionInstance>(&line)
            .map_err(|e| Error::MalformedLine {
                line: lineno,
                reason: e.to_string(),
            })
            .and_then(|inst| {
                if !catalog.contains(&inst.ability) {
                    return Err(Error::UnknownAbility {
                        line: lineno,
                        name: inst.ability.to_string(),
                    });
                }
                inst.validate()
                    .map_err(|reason| Error::MalformedLine { line: lineno, reason })?;
                Ok(inst)
            });
        match parsed {
            Ok(inst) => {
                if id_lines.insert(inst.id.clone(), lineno).is_some() {
                    return Err(Error::DuplicateId {
                        line: lineno,
                        id: inst.id,
                    });
                }
                accepted.push(inst);
            }
            Err(e) if opts.strict => return Err(e),
            Err(e) => {
                let msg = e.to_string();
                let reason = msg.strip_prefix(&format!("line {lineno}: ")).unwrap_or(&msg);
                report.rejected.push(RejectedLine {
                    line: lineno,
                    reason: reason.to_owned(),
                });
            }
        }
    }

    let (corpus, dropped) = Corpus::new(catalog, accepted)?;
    report.accepted = corpus.len();
    report.duplicates = dropped;
    Ok((corpus, report))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    let header = Header {
        catalog: corpus.catalog.clone(),
    };
    let io = |e| Error::io("<corpus>", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for inst in &corpus.instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Instances drawn per ability.
    pub n: usize,
    pub seed: u64,
    /// Empty means the whole catalog.
    pub abilities: Vec<AbilityId>,
}

/// Draws `spec.n` train ids per ability without replacement; abilities are
/// concatenated in catalog order.
pub fn sample_uniform(corpus: &Corpus, spec: &SampleSpec) -> Result<Vec<String>> {
    if spec.n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let mut selected: Vec<&AbilityId> = if spec.abilities.is_empty() {
        corpus.catalog().iter().collect()
    } else {
        for a in &spec.abilities {
            if !corpus.catalog().contains(a) {
                return Err(Error::UnknownAbility {
                    line: 0,
                    name: a.to_string(),
                });
            }
        }
        spec.abilities.iter().collect()
    };
    selected.sort();
    selected.dedup();

    let pools: Vec<(&AbilityId, Vec<&str>)> = selected
        .into_iter()
        .map(|a| (a, corpus.train_ids(a)))
        .collect();
    for (a, pool) in &pools {
        if pool.len() < spec.n {
            return Err(Error::InsufficientTrain {
                ability: a.to_string(),
                requested: spec.n,
                available: pool.len(),
            });
        }
    }

    let mut out = Vec::with_capacity(spec.n * pools.len());
    for (a, pool) in pools {
        let mut rng = SplitMix64::for_key(spec.seed, a.as_str());
        out.extend(
            sample_without_replacement(&pool, spec.n, &mut rng)
                .into_iter()
                .map(str::to_owned),
        );
    }
    Ok(out)
}

/// Powers of 4 below `max_n`, then `max_n`.
pub fn volume_schedule(max_n: u64) -> Result<Vec<u64>> {
    if max_n == 0 {
        return Err(Error::invalid("max_n must be at least 1"));
    }
    let mut out = Vec::new();
    let mut v: u64 = 1;
    while v < max_n {
        out.push(v);
        v = match v.checked_mul(4) {
            Some(next) => next,
            None => break,
        };
    }
    out.push(max_n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn header(names: &[&str]) -> String {
        serde_json::json!({ "catalog": names }).to_string()
    }

    fn line(id: &str, ability: &str, instruction: &str, gold: &str) -> String {
        serde_json::json!({
            "id": id, "ability": ability, "kind": "exact_match", "split": "train",
            "instruction": instruction, "gold": gold,
        })
        .to_string()
    }

    fn load(text: &str, strict: bool) -> Result<(Corpus, LoadReport)> {
        read_corpus(Cursor::new(text.as_bytes()), LoadOptions { strict })
    }

    #[test]
    fn drops_normalized_duplicates() {
        let text = [
            header(&["ethics"]),
            line("a", "ethics", "Is it ok?", "No"),
            line("b", "ethics", "Other question", "Yes"),
            line("c", "ethics", "  Is  it ok？ ", "Ｎｏ"),
        ]
        .join("\n");
        let (corpus, report) = load(&text, false).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(report.duplicates, vec!["c".to_string()]);
        assert_eq!(report.records, 3);
        let ids: Vec<_> = corpus.instances().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn rejects_distractor_equal_to_gold() {
        let bad = serde_json::json!({
            "id": "q", "ability": "ethics", "kind": "open_ended", "split": "test",
            "instruction": "write", "gold": "answer",
            "distractors": [{"text": " answer ", "grain": "fine"}],
        })
        .to_string();
        let text = [header(&["ethics"]), bad, line("ok", "ethics", "x", "y")].join("\n");
        let (corpus, report) = load(&text, false).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].line, 2);
        assert!(matches!(load(&text, true), Err(Error::MalformedLine { line: 2, .. })));
    }

    #[test]
    fn malformed_and_unknown_lines() {
        let text = [
            header(&["ethics"]),
            "{not json".to_string(),
            line("a", "astrology", "x", "y"),
            line("b", "ethics", "x", "y"),
        ]
        .join("\n");
        let (corpus, report) = load(&text, false).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(
            report.rejected.iter().map(|r| r.line).collect::<Vec<_>>(),
            [2, 3]
        );
        assert!(matches!(load(&text, true), Err(Error::MalformedLine { line: 2, .. })));
    }

    #[test]
    fn id_collision_is_fatal_even_when_lenient() {
        let text = [
            header(&["ethics"]),
            line("a", "ethics", "x", "y"),
            line("a", "ethics", "z", "w"),
        ]
        .join("\n");
        assert!(matches!(load(&text, false), Err(Error::DuplicateId { line: 3, .. })));
    }

    #[test]
    fn missing_header_is_fatal() {
        assert!(matches!(load("", false), Err(Error::Catalog(_))));
        assert!(matches!(
            load(&line("a", "ethics", "x", "y"), false),
            Err(Error::Catalog(_))
        ));
    }

    #[test]
    fn catalog_sorted_and_unique() {
        let c = Catalog::from_names(&["b", "a", "c"]).unwrap();
        let names: Vec<_> = c.iter().map(|a| a.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(Catalog::from_names(&["a", "a"]).is_err());
        assert!(AbilityId::new(" ").is_err());
        assert_eq!(Catalog::default_ten().len(), 10);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(volume_schedule(1000).unwrap(), [1, 4, 16, 64, 256, 1000]);
        assert_eq!(volume_schedule(1).unwrap(), [1]);
        assert_eq!(volume_schedule(300).unwrap(), [1, 4, 16, 64, 256, 300]);
        assert_eq!(volume_schedule(4).unwrap(), [1, 4]);
        assert_eq!(volume_schedule(5).unwrap(), [1, 4, 5]);
        assert!(volume_schedule(0).is_err());
        assert_eq!(*volume_schedule(u64::MAX).unwrap().last().unwrap(), u64::MAX);
    }

    #[test]
    fn sample_rejects_oversized_request() {
        let text = [
            header(&["ethics"]),
            line("a", "ethics", "x", "y"),
            line("b", "ethics", "z", "w"),
        ]
        .join("\n");
        let (corpus, _) = load(&text, false).unwrap();
        let spec = SampleSpec {
            n: 3,
            seed: 1,
            abilities: vec![],
        };
        assert!(matches!(
            sample_uniform(&corpus, &spec),
            Err(Error::InsufficientTrain { requested: 3, available: 2, .. })
        ));
        let zero = SampleSpec { n: 0, ..spec };
        assert!(sample_uniform(&corpus, &zero).is_err());
    }
}
