//! Synthetic corpus and per-checkpoint fixture providers for pipeline tests.
//!
//! Each "checkpoint" has a quality `p` per evaluated ability; an instance is
//! answered correctly when a hash of its id falls below `p`, so accuracy
//! rises with model size, data volume and transfer in a controlled way.
#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use tunescale_core::corpus::{
    write_corpus, AbilityId, Catalog, Corpus, Distractor, Grain, InstanceKind, InstructionInstance,
    Split,
};
use tunescale_core::logprob::{CandidateId, FixtureEntry};
use tunescale_core::rng::fnv1a64;

pub const ABILITIES: [&str; 4] = ["chinese", "code_generation", "ethics", "logical_reasoning"];
pub const PER_ABILITY: usize = 50;
pub const SIZES: [u64; 2] = [7_000_000_000, 13_000_000_000];
pub const VOLUMES: [u64; 3] = [1, 4, 16];
pub const EPOCHS: [u32; 3] = [3, 6, 7];

/// (base, size slope, volume slope, transfer out)
fn profile(ability: &str) -> (f64, f64, f64, f64) {
    match ability {
        "chinese" => (0.30, 0.35, 0.30, 0.05),
        "code_generation" => (0.35, 0.15, 0.40, 0.15),
        "ethics" => (0.50, 0.00, 0.02, -0.05),
        "logical_reasoning" => (0.15, 0.08, 0.55, 0.10),
        other => panic!("no profile for {other}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub size: u64,
    pub volume: u64,
    pub epoch: u32,
}

impl Checkpoint {
    pub fn name(&self) -> String {
        format!("n{}_d{}_e{}", self.size / 1_000_000_000, self.volume, self.epoch)
    }

    fn quality(&self, ability: &str) -> f64 {
        let (base, ks, kd, _) = profile(ability);
        let size = (self.size as f64 / SIZES[0] as f64).ln() / (SIZES[1] as f64 / SIZES[0] as f64).ln();
        let volume = (self.volume as f64).ln() / 16f64.ln();
        let epoch = match self.epoch {
            3 => -0.05,
            6 => 0.0,
            _ => 0.04,
        };
        (base + ks * size + kd * volume + epoch).clamp(0.0, 1.0)
    }
}

pub fn checkpoints() -> Vec<Checkpoint> {
    let mut out = Vec::new();
    for &size in &SIZES {
        for &volume in &VOLUMES {
            for &epoch in &EPOCHS {
                out.push(Checkpoint { size, volume, epoch });
            }
        }
    }
    out
}

fn transfer_quality(trained_on: Option<&str>, evaluated: &str) -> f64 {
    let (base, ..) = profile(evaluated);
    match trained_on {
        None => base - 0.1,
        Some(t) if t == evaluated => base + 0.35,
        Some(t) => base + profile(t).3,
    }
    .clamp(0.0, 1.0)
}

pub fn corpus() -> Corpus {
    let catalog = Catalog::from_names(&ABILITIES).unwrap();
    let mut instances = Vec::new();
    for a in ABILITIES {
        for i in 0..PER_ABILITY {
            let split = match i {
                0..=29 => Split::Train,
                30..=39 => Split::Valid,
                _ => Split::Test,
            };
            let open = i % 2 == 1;
            instances.push(InstructionInstance {
                id: format!("{a}-{i:02}"),
                ability: AbilityId::new(a).unwrap(),
                kind: if open { InstanceKind::OpenEnded } else { InstanceKind::ExactMatch },
                split,
                instruction: format!("[{a}] task {i}"),
                gold: if open { format!("answer {a} {i}") } else { ["A", "B", "C", "D"][i % 4].into() },
                distractors: if open {
                    vec![
                        Distractor { text: format!("answer {a} {} (altered)", i + 1), grain: Grain::Fine },
                        Distractor { text: format!("unrelated text {i}"), grain: Grain::Coarse },
                    ]
                } else {
                    Vec::new()
                },
            });
        }
    }
    let (corpus, dropped) = Corpus::new(catalog, instances).unwrap();
    assert!(dropped.is_empty());
    corpus
}

fn entries(corpus: &Corpus, quality: impl Fn(&str) -> f64) -> Vec<FixtureEntry> {
    let mut out = Vec::new();
    for inst in corpus.instances().iter().filter(|i| i.split != Split::Train) {
        let p = quality(inst.ability.as_str());
        let correct = (fnv1a64(inst.id.as_bytes()) % 1000) as f64 / 1000.0 < p;
        let gold_lp = -(0.3 + 0.5 * (1.0 - p));
        out.push(FixtureEntry::LogProbs {
            instance_id: inst.id.clone(),
            candidate_id: CandidateId::Gold,
            logprobs: vec![gold_lp; 3],
        });
        match inst.kind {
            InstanceKind::ExactMatch => out.push(FixtureEntry::Generation {
                instance_id: inst.id.clone(),
                generation: if correct { format!(" {} ", inst.gold.to_lowercase()) } else { "Z".into() },
            }),
            InstanceKind::OpenEnded => {
                for j in 0..inst.distractors.len() {
                    let lp = if !correct && j == 0 { -0.1 } else { -1.0 };
                    out.push(FixtureEntry::LogProbs {
                        instance_id: inst.id.clone(),
                        candidate_id: CandidateId::Distractor(j),
                        logprobs: vec![lp; 3],
                    });
                }
            }
        }
    }
    out
}

fn write_entries(path: &Path, entries: &[FixtureEntry]) {
    FixtureEntry::write_all(entries, BufWriter::new(File::create(path).unwrap())).unwrap();
}

/// Input files shared by pipeline runs.
pub struct Inputs {
    pub dir: PathBuf,
    pub corpus: PathBuf,
}

impl Inputs {
    pub fn fixture(&self, name: &str) -> PathBuf {
        self.dir.join(format!("fx_{name}.jsonl"))
    }
}

pub fn write_inputs(dir: &Path) -> Inputs {
    std::fs::create_dir_all(dir).unwrap();
    let corpus = corpus();
    let corpus_path = dir.join("corpus_raw.jsonl");
    write_corpus(&corpus, BufWriter::new(File::create(&corpus_path).unwrap())).unwrap();
    let inputs = Inputs { dir: dir.to_path_buf(), corpus: corpus_path };
    for cp in checkpoints() {
        write_entries(&inputs.fixture(&cp.name()), &entries(&corpus, |a| cp.quality(a)));
    }
    for t in ABILITIES.iter().map(|a| Some(*a)).chain([None]) {
        let name = format!("tr_{}", t.unwrap_or("foundation"));
        write_entries(&inputs.fixture(&name), &entries(&corpus, |a| transfer_quality(t, a)));
    }
    inputs
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn run(args: &[String]) {
    let argv = std::iter::once("tunescale".to_owned()).chain(args.iter().cloned());
    if let Err(e) = tunescale_cli::run(argv) {
        panic!("`{}` failed: {e:#}", args.join(" "));
    }
}

/// ingest → sample → score → fit → features → plan → report under `out`.
pub fn run_pipeline(inputs: &Inputs, out: &Path) {
    let o = |sub: &str| s(&out.join(sub));
    let corpus = out.join("ingest").join("corpus.jsonl");
    run(&["--out".into(), o("ingest"), "ingest".into(), "--input".into(), s(&inputs.corpus)]);
    run(&[
        "--seed".into(), "7".into(), "--out".into(), o("sample"),
        "sample".into(), "--corpus".into(), s(&corpus), "--max-n".into(), "16".into(),
    ]);

    let mut runlogs = Vec::new();
    for cp in checkpoints() {
        for split in ["valid", "test"] {
            let dir = out.join("score").join(format!("{}_{split}", cp.name()));
            run(&[
                "--out".into(), s(&dir), "score".into(),
                "--corpus".into(), s(&corpus),
                "--fixture".into(), s(&inputs.fixture(&cp.name())),
                "--max-in-flight".into(), "4".into(),
                "--split".into(), split.into(),
                "--model-size".into(), cp.size.to_string(),
                "--data-volume".into(), cp.volume.to_string(),
                "--epoch".into(), cp.epoch.to_string(),
            ]);
            runlogs.push(dir.join("runlog.csv"));
        }
    }

    let (mut transfer, mut loss) = (Vec::new(), Vec::new());
    for t in ABILITIES.iter().copied().chain(["foundation"]) {
        let dir = out.join("transfer").join(t);
        let mut args: Vec<String> = vec![
            "--out".into(), s(&dir), "score".into(),
            "--corpus".into(), s(&corpus),
            "--fixture".into(), s(&inputs.fixture(&format!("tr_{t}"))),
            "--model-size".into(), SIZES[0].to_string(),
            "--data-volume".into(), "64".into(),
            "--epoch".into(), "6".into(),
            "--trained-on".into(), t.into(),
        ];
        if t != "foundation" {
            args.push("--with-loss".into());
            loss.push(dir.join("loss.csv"));
        }
        run(&args);
        transfer.push(dir.join("transfer.csv"));
    }

    let repeat = |flag: &str, paths: &[PathBuf]| -> Vec<String> {
        paths.iter().flat_map(|p| [flag.to_owned(), s(p)]).collect()
    };
    let mut args = vec!["--out".into(), o("fit"), "fit".into()];
    args.extend(repeat("--runlog", &runlogs));
    run(&args);

    let fits = out.join("fit").join("fits.csv");
    let mut args = vec!["--out".into(), o("features"), "features".into(), "--fits".into(), s(&fits)];
    args.extend(repeat("--transfer", &transfer));
    args.extend(repeat("--loss", &loss));
    run(&args);

    let config = out.join("plan.conf");
    std::fs::write(
        &config,
        format!("strategy = reconstruct\nbudget = 1000\nsaturated_cap = 100\nfits = {}\n", s(&fits)),
    )
    .unwrap();
    let mut args = vec!["--config".into(), s(&config), "--out".into(), o("plan"), "plan".into()];
    args.extend(repeat("--runlog", &runlogs));
    run(&args);

    let mut args = vec![
        "--out".into(), o("report"), "report".into(),
        "--scores".into(), s(&fixtures_dir().join("table3_scores.csv")),
    ];
    args.extend(repeat("--runlog", &runlogs));
    run(&args);
}

/// Relative path → bytes for every file under `root`, manifests and the
/// config file excluded.
pub fn snapshot(root: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.file_name().unwrap().to_string_lossy();
            if name.starts_with("manifest_") || name.ends_with(".conf") {
                continue;
            }
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
        }
    }
    out
}
