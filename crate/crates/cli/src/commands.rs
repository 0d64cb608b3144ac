use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use tunescale_core::corpus::{
    load_corpus, sample_uniform, volume_schedule, write_corpus, AbilityId, Corpus, LoadOptions,
    SampleSpec, Split, DEFAULT_ABILITIES,
};
use tunescale_core::eval::{
    best_test_points_after, build_accuracy_matrix, read_runlog, score_dataset, write_runlog,
    AccuracyMatrix, AccuracyUnit, LossRow, RunPoint, ScoreSettings, TransferCell, FOUNDATION,
};
use tunescale_core::features::{correlate, features, FeatureWeights};
use tunescale_core::logprob::{Decoding, ProviderConfig, ProviderMode};
use tunescale_core::planner::{
    add_synthetic, advise_axis, classify_abilities, detect_plateau, plan_baseline, plan_maximum,
    plan_reconstruct, write_plan, AbilityClass, Availability, ClassKind, ClassThresholds,
    Recommendation,
};
use tunescale_core::report::{compare, curves, volume_curves, ScoreRow};
use tunescale_core::scaling::{fit_all, Axis, FitRow};
use tunescale_core::table::{read_csv_path, write_csv_path, write_jsonl_path};
use tunescale_core::{kv, Error};

use crate::{
    Cli, Command, EvalSplit, FeaturesArgs, FitArgs, IngestArgs, PlanArgs, ProviderKind, ReportArgs,
    SampleArgs, ScoreArgs, StrategyArg, TOKEN_ENV,
};

pub fn dispatch(cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Outputs::new(&cli.out);
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a, &mut out)?,
        Command::Sample(a) => sample(cli, a, &mut out)?,
        Command::Score(a) => score(a, &mut out)?,
        Command::Fit(a) => fit(a, &mut out)?,
        Command::Features(a) => features_cmd(a, &mut out)?,
        Command::Plan(a) => plan(a, &mut out)?,
        Command::Report(a) => report(a, &mut out)?,
    }
    out.manifest(cli)
}

/// Tracks files written under the output directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn create_dir(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir)(e))?;
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        let p = self.path(name);
        write_csv_path(rows, &p).with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).map_err(io(&p))?;
        Ok(())
    }

    fn manifest(mut self, cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            version: &'a str,
            created_unix: u64,
            outputs: Vec<String>,
            config: &'a Cli,
        }
        let outputs = self
            .written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let name = format!("manifest_{}.json", cli.command.name());
        self.json(
            &name,
            &Manifest {
                command: cli.command.name(),
                version: env!("CARGO_PKG_VERSION"),
                created_unix,
                outputs,
                config: cli,
            },
        )?;
        Ok(self.written)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> anyhow::Error + '_ {
    move |e| anyhow::Error::new(e).context(path.display().to_string())
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(io(path)(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no such file",
        )));
    }
    Ok(())
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> anyhow::Result<()> {
    paths.into_iter().try_for_each(|p| require_file(p))
}

fn abilities(names: &[String]) -> anyhow::Result<Vec<AbilityId>> {
    Ok(names
        .iter()
        .map(|n| AbilityId::new(n.as_str()))
        .collect::<Result<_, _>>()?)
}

fn read_runlogs(paths: &[PathBuf], unit: AccuracyUnit) -> anyhow::Result<Vec<RunPoint<f64>>> {
    let mut points = Vec::new();
    for p in paths {
        let file = File::open(p).map_err(io(p))?;
        points.extend(read_runlog::<f64, _>(file, unit).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(points)
}

fn read_availability(path: &Path) -> anyhow::Result<Availability> {
    let raw: BTreeMap<String, u64> = kv::parse_values(&kv::read_kv(path)?)?;
    raw.into_iter()
        .map(|(k, v)| Ok((AbilityId::new(k)?, v)))
        .collect()
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<Corpus> {
    let (corpus, report) = load_corpus(path, LoadOptions { strict: cli.strict })?;
    for r in &report.rejected {
        log::warn!("{}: line {} skipped: {}", path.display(), r.line, r.reason);
    }
    Ok(corpus)
}

#[derive(Serialize)]
struct IngestReport {
    records: usize,
    accepted: usize,
    instances: usize,
    rejected: Vec<tunescale_core::corpus::RejectedLine>,
    duplicates: Vec<String>,
    counts: BTreeMap<String, BTreeMap<String, usize>>,
}

fn ingest(cli: &Cli, a: &IngestArgs, out: &mut Outputs) -> anyhow::Result<()> {
    require_file(&a.input)?;
    out.create_dir()?;
    let (corpus, report) = load_corpus(&a.input, LoadOptions { strict: cli.strict })?;
    for r in &report.rejected {
        log::warn!("{}: line {} skipped: {}", a.input.display(), r.line, r.reason);
    }
    let p = out.path("corpus.jsonl");
    let file = File::create(&p).map_err(io(&p))?;
    write_corpus(&corpus, BufWriter::new(file))?;
    let counts = corpus
        .counts()
        .into_iter()
        .map(|(split, per)| {
            (
                split.to_string(),
                per.into_iter().map(|(a, n)| (a.to_string(), n)).collect(),
            )
        })
        .collect();
    log::info!(
        "{} records, {} accepted, {} rejected, {} duplicates",
        report.records,
        report.accepted,
        report.rejected.len(),
        report.duplicates.len()
    );
    out.json(
        "ingest_report.json",
        &IngestReport {
            records: report.records,
            accepted: report.accepted,
            instances: corpus.len(),
            rejected: report.rejected,
            duplicates: report.duplicates,
            counts,
        },
    )
}

fn sample(cli: &Cli, a: &SampleArgs, out: &mut Outputs) -> anyhow::Result<()> {
    require_file(&a.corpus)?;
    let volumes = match (a.n.is_empty(), a.max_n) {
        (false, None) => a.n.clone(),
        (true, Some(max)) => volume_schedule(max)?,
        (false, Some(_)) => bail!("give either --n or --max-n, not both"),
        (true, None) => bail!("one of --n or --max-n is required"),
    };
    let selected = abilities(&a.abilities)?;
    out.create_dir()?;
    let corpus = load(cli, &a.corpus)?;
    for n in volumes {
        let ids = sample_uniform(
            &corpus,
            &SampleSpec {
                n: usize::try_from(n)?,
                seed: cli.seed,
                abilities: selected.clone(),
            },
        )?;
        let p = out.path(&format!("sample_n{n}.txt"));
        let mut w = BufWriter::new(File::create(&p).map_err(io(&p))?);
        for id in ids {
            writeln!(w, "{id}").map_err(io(&p))?;
        }
        w.flush().map_err(io(&p))?;
    }
    Ok(())
}

fn provider_config(a: &ScoreArgs) -> anyhow::Result<ProviderConfig> {
    let mut cfg = match a.provider {
        ProviderKind::Fixture => {
            let path = a
                .fixture
                .as_ref()
                .ok_or_else(|| anyhow!("--fixture is required with the fixture provider"))?;
            require_file(path)?;
            ProviderConfig::fixture(path)
        }
        ProviderKind::Remote => {
            let endpoint = a
                .endpoint
                .as_ref()
                .ok_or_else(|| anyhow!("--endpoint is required with the remote provider"))?;
            let mut cfg = ProviderConfig::remote(endpoint.as_str());
            cfg.bearer_token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
            cfg
        }
    };
    cfg.max_in_flight = a.max_in_flight;
    cfg.timeout_ms = a.timeout_ms;
    cfg.retries = a.retries;
    Ok(cfg)
}

fn score(a: &ScoreArgs, out: &mut Outputs) -> anyhow::Result<()> {
    require_file(&a.corpus)?;
    let cfg = provider_config(a)?;
    if let ProviderMode::Remote { endpoint } = &cfg.mode {
        log::info!("scoring against {endpoint}");
    }
    let unit: AccuracyUnit = a.unit.into();
    let split = match a.split {
        EvalSplit::Valid => Split::Valid,
        EvalSplit::Test => Split::Test,
    };
    let selected: BTreeSet<AbilityId> = abilities(&a.abilities)?.into_iter().collect();
    out.create_dir()?;

    let (corpus, _) = load_corpus(&a.corpus, LoadOptions { strict: true })?;
    let trained = a.trained_on.iter().filter(|t| *t != FOUNDATION);
    for name in trained.map(|t| AbilityId::new(t.as_str())).collect::<Result<Vec<_>, _>>()?.iter().chain(&selected) {
        if !corpus.catalog().contains(name) {
            bail!("ability `{name}` is not in the corpus catalog");
        }
    }
    let instances: Vec<_> = corpus
        .in_split(split)
        .filter(|i| selected.is_empty() || selected.contains(&i.ability))
        .collect();
    let provider = cfg.build()?;
    let settings = ScoreSettings {
        length_normalize: a.length_normalize,
        decoding: Decoding {
            max_tokens: a.max_tokens,
            temperature: a.temperature,
        },
        compute_loss: a.with_loss,
        ..Default::default()
    };
    let scores = score_dataset::<f64>(&instances, provider.as_ref(), &settings)?;

    let scale = unit.max::<f64>();
    let points: Vec<RunPoint<f64>> = scores
        .abilities
        .iter()
        .map(|s| RunPoint {
            ability: s.ability.clone(),
            model_size: a.model_size,
            data_volume: a.data_volume,
            epoch: a.epoch,
            split,
            accuracy: s.accuracy * scale,
        })
        .collect();
    for p in &points {
        p.validate(unit)?;
        log::info!("{}: {} = {}", p.ability, split, p.accuracy);
    }
    let p = out.path("runlog.csv");
    write_runlog(&points, File::create(&p).map_err(io(&p))?)?;
    let p = out.path("scores.jsonl");
    write_jsonl_path(&scores.instances, &p)?;

    if let Some(trained) = &a.trained_on {
        let cells: Vec<TransferCell<f64>> = points
            .iter()
            .map(|p| TransferCell {
                trained_on: trained.clone(),
                evaluated: p.ability.clone(),
                accuracy: p.accuracy,
            })
            .collect();
        out.csv("transfer.csv", &cells)?;
    }
    if a.with_loss {
        let rows: Vec<LossRow<f64>> = scores
            .abilities
            .iter()
            .filter(|s| match &a.trained_on {
                Some(t) => s.ability.as_str() == t,
                None => true,
            })
            .filter_map(|s| {
                s.loss.map(|loss| LossRow {
                    ability: s.ability.clone(),
                    loss,
                })
            })
            .collect();
        out.csv("loss.csv", &rows)?;
    }
    Ok(())
}

fn fit(a: &FitArgs, out: &mut Outputs) -> anyhow::Result<()> {
    require_files(&a.runlog)?;
    out.create_dir()?;
    let unit: AccuracyUnit = a.unit.into();
    let points = read_runlogs(&a.runlog, unit)?;
    let best = best_test_points_after(&points, a.after_epoch)?;
    let rows = fit_all(&best, unit)?;
    if rows.is_empty() {
        bail!("no ability has two distinct scales on either axis");
    }
    let p = out.path("selected.csv");
    write_runlog(&best, File::create(&p).map_err(io(&p))?)?;
    out.csv("fits.csv", &rows)
}

#[derive(Serialize)]
struct FeatureRow {
    ability: AbilityId,
    complexity: f64,
    transference: f64,
    w1: f64,
    w2: f64,
    w: f64,
}

#[derive(Serialize)]
struct RelationRow {
    feature: &'static str,
    axis: Axis,
    slope: f64,
    intercept: f64,
    pearson_r: f64,
    n: usize,
}

fn features_cmd(a: &FeaturesArgs, out: &mut Outputs) -> anyhow::Result<()> {
    if let Some(m) = &a.matrix {
        require_file(m)?;
    }
    require_files(a.transfer.iter().chain(&a.loss).chain(&a.fits))?;
    out.create_dir()?;
    let unit: AccuracyUnit = a.unit.into();
    let matrix: AccuracyMatrix<f64> = match &a.matrix {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io(path))?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => {
            if a.transfer.is_empty() {
                bail!("one of --matrix or --transfer is required");
            }
            let mut cells = Vec::new();
            for p in &a.transfer {
                cells.extend(read_csv_path::<TransferCell<f64>>(p)?);
            }
            let mut losses = Vec::new();
            for p in &a.loss {
                losses.extend(read_csv_path::<LossRow<f64>>(p)?);
            }
            build_accuracy_matrix(&cells, &losses, unit)?
        }
    };
    let defaults = FeatureWeights::<f64>::default_for(matrix.k());
    let weights = FeatureWeights::new(
        a.w1.unwrap_or(defaults.w1),
        a.w2.unwrap_or(defaults.w2),
        a.w.unwrap_or(defaults.w),
    )?;
    let fv = features(&matrix, &weights);
    let rows: Vec<FeatureRow> = fv
        .iter()
        .map(|f| FeatureRow {
            ability: f.ability.clone(),
            complexity: f.complexity,
            transference: f.transference,
            w1: f.weights.w1,
            w2: f.weights.w2,
            w: f.weights.w,
        })
        .collect();
    out.json("matrix.json", &matrix)?;
    out.csv("features.csv", &rows)?;

    let Some(fits_path) = &a.fits else { return Ok(()) };
    let fits: Vec<FitRow<f64>> = read_csv_path(fits_path)?;
    let mut relations = Vec::new();
    for axis in Axis::BOTH {
        let sens: BTreeMap<AbilityId, f64> = fits
            .iter()
            .filter(|r| r.axis == axis && matrix.index_of(&r.ability).is_some())
            .filter_map(|r| r.normalized_alpha.map(|v| (r.ability.clone(), v)))
            .collect();
        for (name, pick) in [
            ("complexity", (|f: &tunescale_core::features::FeatureVector<f64>| f.complexity) as fn(&_) -> f64),
            ("transference", |f| f.transference),
        ] {
            let feat: BTreeMap<AbilityId, f64> = fv
                .iter()
                .filter(|f| sens.contains_key(&f.ability))
                .map(|f| (f.ability.clone(), pick(f)))
                .collect();
            match correlate(&feat, &sens) {
                Ok(rel) => relations.push(RelationRow {
                    feature: name,
                    axis,
                    slope: rel.slope,
                    intercept: rel.intercept,
                    pearson_r: rel.pearson_r,
                    n: rel.n,
                }),
                Err(e @ (Error::ConstantFeature | Error::ConstantSensitivity | Error::Invalid(_))) => {
                    log::warn!("no {name} relation on the {axis} axis: {e}");
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    out.csv("relations.csv", &relations)
}

fn parse_class(ability: &AbilityId, spec: &str, a: &PlanArgs) -> anyhow::Result<ClassKind> {
    let (name, count) = match spec.split_once(':') {
        Some((n, c)) => (
            n.trim(),
            Some(c.trim().parse::<u64>().map_err(|e| anyhow!("class of `{ability}`: {e}"))?),
        ),
        None => (spec.trim(), None),
    };
    Ok(match name {
        "resistant" => ClassKind::Resistant {
            floor: count.unwrap_or(a.floor),
        },
        "saturated" => ClassKind::Saturated {
            cap: count.unwrap_or(a.saturated_cap),
        },
        "responsive" if count.is_none() => ClassKind::Responsive,
        _ => bail!("class of `{ability}`: expected resistant, saturated or responsive, got `{spec}`"),
    })
}

#[derive(Serialize)]
struct ClassRow {
    ability: AbilityId,
    class: &'static str,
    count: Option<u64>,
}

#[derive(Serialize)]
struct AdviceRow {
    ability: AbilityId,
    param_sensitivity: f64,
    data_sensitivity: f64,
    recommendation: Recommendation,
}

fn normalized(fits: &[FitRow<f64>], axis: Axis) -> BTreeMap<AbilityId, f64> {
    fits.iter()
        .filter(|r| r.axis == axis)
        .filter_map(|r| r.normalized_alpha.map(|v| (r.ability.clone(), v)))
        .collect()
}

fn plan(a: &PlanArgs, out: &mut Outputs) -> anyhow::Result<()> {
    require_files(
        a.availability
            .iter()
            .chain(&a.overrides)
            .chain(&a.classes)
            .chain(&a.fits)
            .chain(&a.runlog),
    )?;
    out.create_dir()?;
    let availability = a.availability.as_deref().map(read_availability).transpose()?;
    let fits: Option<Vec<FitRow<f64>>> = a.fits.as_ref().map(read_csv_path).transpose()?;

    if let Some(fits) = &fits {
        let (param, data) = (normalized(fits, Axis::Parameter), normalized(fits, Axis::Data));
        let mut rows = Vec::new();
        for (ability, &p) in &param {
            let Some(&d) = data.get(ability) else { continue };
            let rec = advise_axis(p, d)?;
            rows.push(AdviceRow {
                ability: ability.clone(),
                param_sensitivity: p,
                data_sensitivity: d,
                recommendation: rec.recommendation,
            });
        }
        out.csv("advice.csv", &rows)?;
    }

    let mut plan = match a.strategy {
        StrategyArg::Baseline => {
            let names: Vec<AbilityId> = if !a.abilities.is_empty() {
                abilities(&a.abilities)?
            } else if let Some(av) = &availability {
                av.keys().cloned().collect()
            } else {
                abilities(&DEFAULT_ABILITIES.map(String::from))?
            };
            plan_baseline(&names, a.per_ability, availability.as_ref())?
        }
        StrategyArg::Maximum => {
            let av = availability
                .as_ref()
                .ok_or_else(|| anyhow!("--availability is required for the maximum strategy"))?;
            let overrides = a
                .overrides
                .as_deref()
                .map(read_availability)
                .transpose()?
                .unwrap_or_default();
            plan_maximum(av, &overrides)?
        }
        StrategyArg::Reconstruct => {
            let classes = reconstruct_classes(a, fits.as_deref())?;
            let rows: Vec<ClassRow> = classes
                .iter()
                .map(|c| {
                    let (class, count) = match c.class {
                        ClassKind::Resistant { floor } => ("resistant", Some(floor)),
                        ClassKind::Saturated { cap } => ("saturated", Some(cap)),
                        ClassKind::Responsive => ("responsive", None),
                    };
                    ClassRow {
                        ability: c.ability.clone(),
                        class,
                        count,
                    }
                })
                .collect();
            out.csv("classes.csv", &rows)?;
            plan_reconstruct(&classes, a.budget, availability.as_ref())?
        }
    };
    if a.synthetic > 0 {
        plan = add_synthetic(&plan, a.synthetic, a.synthetic_warn_ratio);
    }
    for w in &plan.warnings {
        log::warn!("{w}");
    }
    log::info!("{}: {} human instances", plan.label(), plan.total());
    let p = out.path("plan.csv");
    write_plan(&plan, File::create(&p).map_err(io(&p))?)?;
    Ok(())
}

fn reconstruct_classes(a: &PlanArgs, fits: Option<&[FitRow<f64>]>) -> anyhow::Result<Vec<AbilityClass>> {
    if let Some(path) = &a.classes {
        return kv::read_kv(path)?
            .iter()
            .map(|(k, v)| {
                let ability = AbilityId::new(k.as_str())?;
                let class = parse_class(&ability, v, a)?;
                Ok(AbilityClass { ability, class })
            })
            .collect();
    }
    let fits = fits.ok_or_else(|| anyhow!("reconstruct needs --classes or --fits"))?;
    let (param, data) = (normalized(fits, Axis::Parameter), normalized(fits, Axis::Data));
    let plateau = if a.runlog.is_empty() {
        BTreeMap::new()
    } else {
        let unit: AccuracyUnit = a.unit.into();
        let best = best_test_points_after(&read_runlogs(&a.runlog, unit)?, a.after_epoch)?;
        let eps = a.plateau_epsilon * unit.max::<f64>();
        volume_curves(&best)?
            .into_iter()
            .map(|(ability, pairs)| {
                let flat = pairs.len() >= 2 && detect_plateau(&pairs, eps)?;
                Ok((ability, flat))
            })
            .collect::<anyhow::Result<_>>()?
    };
    Ok(classify_abilities(
        &param,
        &data,
        &ClassThresholds {
            resistant_threshold: a.resistant_threshold,
            floor: a.floor,
            saturated_cap: a.saturated_cap,
        },
        &plateau,
    )?)
}

fn report(a: &ReportArgs, out: &mut Outputs) -> anyhow::Result<()> {
    if a.runlog.is_empty() && a.scores.is_none() {
        bail!("report needs --runlog or --scores");
    }
    require_files(a.runlog.iter().chain(&a.scores))?;
    out.create_dir()?;
    if !a.runlog.is_empty() {
        let best = best_test_points_after(&read_runlogs(&a.runlog, a.unit.into())?, a.after_epoch)?;
        out.csv("curves.csv", &curves(&best))?;
    }
    if let Some(path) = &a.scores {
        let rows: Vec<ScoreRow<f64>> = read_csv_path(path)?;
        let table = compare(&rows)?;
        let flagged = table.iter().filter(|r| r.improved).count();
        let differs = table.iter().filter(|r| !r.annotation.is_empty()).count();
        log::info!("{flagged} improvements, {differs} disagree with published flags");
        out.csv("comparison.csv", &table)?;
    }
    Ok(())
}
