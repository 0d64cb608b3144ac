//! Per-ability accuracies from log-probabilities and generations.

mod matrix;
mod runlog;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AbilityId, InstanceKind, InstructionInstance, Split};
use crate::error::{Error, Result};
use crate::logprob::{CandidateId, Decoding, Provider, RecordKey, TokenLogProbRecord};
use crate::text::MatchNormalizer;
use crate::Scalar;

pub use matrix::{build_accuracy_matrix, AccuracyMatrix, LossRow, TransferCell, FOUNDATION};
pub use runlog::{read_runlog, write_runlog};

/// Checkpoints at or before this epoch are never selected.
pub const SELECTION_AFTER_EPOCH: u32 = 5;

/// Whether accuracies are fractions in `[0, 1]` or percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyUnit {
    #[default]
    Fraction,
    Percent,
}

impl AccuracyUnit {
    pub fn max<T: Scalar>(self) -> T {
        match self {
            AccuracyUnit::Fraction => T::one(),
            AccuracyUnit::Percent => T::from_f64_lossy(100.0),
        }
    }

    pub fn check<T: Scalar>(self, what: impl FnOnce() -> String, v: T) -> Result<()> {
        if v.is_finite() && v >= T::zero() && v <= self.max() {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                what: what(),
                value: v.to_f64_lossy(),
            })
        }
    }
}

impl fmt::Display for AccuracyUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccuracyUnit::Fraction => "fraction",
            AccuracyUnit::Percent => "percent",
        })
    }
}

impl std::str::FromStr for AccuracyUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction" => Ok(AccuracyUnit::Fraction),
            "percent" => Ok(AccuracyUnit::Percent),
            other => Err(Error::invalid(format!("unknown accuracy unit `{other}`"))),
        }
    }
}

/// Negative log-likelihood of the continuation: `-Σ lp`, or `-Σ lp / T`
/// when length-normalized. This is `ln PPL`.
pub fn log_ppl<T: Scalar>(logprobs: &[T], length_normalize: bool) -> T {
    let nll = -logprobs.iter().copied().sum::<T>();
    if length_normalize {
        nll / T::from_usize(logprobs.len()).expect("token count fits the scalar")
    } else {
        nll
    }
}

/// `exp(-Σ log p(g_t | i, g_<t))`; with `length_normalize`, the per-token
/// form `exp(-Σ/T)`. Overflows to `+inf` for very long unnormalized
/// continuations; scoring compares [`log_ppl`] and is unaffected.
pub fn ppl<T: Scalar>(record: &TokenLogProbRecord<T>, length_normalize: bool) -> T {
    log_ppl(record.logprobs(), length_normalize).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalScore<T: Scalar = f64> {
    pub instance_id: String,
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_gold: Option<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ppl_distractors: Vec<T>,
}

/// 1 iff every distractor has strictly higher perplexity than the gold
/// continuation. Ties go to the distractor.
pub fn score_open_ended<T: Scalar>(
    gold: &TokenLogProbRecord<T>,
    distractors: &[TokenLogProbRecord<T>],
    length_normalize: bool,
) -> Result<EvalScore<T>> {
    if distractors.is_empty() {
        return Err(Error::Empty("distractors"));
    }
    if gold.candidate_id != CandidateId::Gold {
        return Err(Error::invalid(format!(
            "gold record has candidate id `{}`",
            gold.candidate_id
        )));
    }
    for d in distractors {
        if d.instance_id != gold.instance_id {
            return Err(Error::invalid(format!(
                "instance id mismatch: gold `{}`, distractor `{}`",
                gold.instance_id, d.instance_id
            )));
        }
    }
    let gold_log = log_ppl(gold.logprobs(), length_normalize);
    let min_distractor = distractors
        .iter()
        .map(|d| log_ppl(d.logprobs(), length_normalize))
        .fold(T::infinity(), T::min);
    Ok(EvalScore {
        instance_id: gold.instance_id.clone(),
        score: u8::from(min_distractor > gold_log),
        ppl_gold: Some(gold_log.exp()),
        ppl_distractors: distractors
            .iter()
            .map(|d| ppl(d, length_normalize))
            .collect(),
    })
}

/// Fraction of positions whose normalized prediction equals the normalized gold.
pub fn exact_match_accuracy<T: Scalar, P: AsRef<str>, G: AsRef<str>>(
    predictions: &[P],
    golds: &[G],
    normalizer: &MatchNormalizer,
) -> Result<T> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalizer.apply(p.as_ref()) == normalizer.apply(g.as_ref()))
        .count();
    Ok(T::from_usize(hits).unwrap() / T::from_usize(predictions.len()).unwrap())
}

/// One (ability, N, D, epoch, split) accuracy observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RunPoint<T: Scalar = f64> {
    pub ability: AbilityId,
    /// Parameter count N.
    pub model_size: u64,
    /// Per-ability training instances D.
    pub data_volume: u64,
    pub epoch: u32,
    pub split: Split,
    pub accuracy: T,
}

impl<T: Scalar> RunPoint<T> {
    pub fn validate(&self, unit: AccuracyUnit) -> Result<()> {
        if self.split == Split::Train {
            return Err(Error::invalid("run points are valid or test observations"));
        }
        if self.model_size == 0 || self.data_volume == 0 || self.epoch == 0 {
            return Err(Error::invalid(format!(
                "run point for `{}` has a zero size, volume or epoch",
                self.ability
            )));
        }
        unit.check(|| format!("accuracy of `{}`", self.ability), self.accuracy)
    }

    fn setting(&self) -> (&AbilityId, u64, u64) {
        (&self.ability, self.model_size, self.data_volume)
    }
}

/// Best validation epoch strictly after [`SELECTION_AFTER_EPOCH`]; ties go to
/// the earliest epoch. All points must share one (ability, N, D) setting.
pub fn select_checkpoint<T: Scalar>(points: &[RunPoint<T>]) -> Result<u32> {
    select_checkpoint_after(points, SELECTION_AFTER_EPOCH)
}

/// [`select_checkpoint`] with a custom cutoff: only epochs `> after` count.
pub fn select_checkpoint_after<T: Scalar>(points: &[RunPoint<T>], after: u32) -> Result<u32> {
    let first = points.first().ok_or(Error::Empty("run points"))?;
    let mut by_epoch: BTreeMap<u32, T> = BTreeMap::new();
    for p in points {
        if p.split != Split::Valid {
            return Err(Error::invalid("checkpoint selection uses valid-split points only"));
        }
        if p.setting() != first.setting() {
            return Err(Error::invalid(format!(
                "mixed settings in checkpoint selection: {:?} vs {:?}",
                first.setting(),
                p.setting()
            )));
        }
        if by_epoch.insert(p.epoch, p.accuracy).is_some() {
            return Err(Error::invalid(format!("epoch {} appears twice", p.epoch)));
        }
    }
    let mut best: Option<(u32, T)> = None;
    for (&epoch, &acc) in by_epoch.range(after.saturating_add(1)..) {
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((epoch, acc));
        }
    }
    best.map(|(e, _)| e)
        .ok_or(Error::NoEligibleEpoch(after))
}

/// Resolves a run log to one test point per (ability, N, D): where the
/// setting has valid-split points, the test point at the selected epoch;
/// otherwise its single test point. Sorted by (ability, N, D).
pub fn best_test_points<T: Scalar>(points: &[RunPoint<T>]) -> Result<Vec<RunPoint<T>>> {
    best_test_points_after(points, SELECTION_AFTER_EPOCH)
}

pub fn best_test_points_after<T: Scalar>(points: &[RunPoint<T>], after: u32) -> Result<Vec<RunPoint<T>>> {
    type Group<'a, T> = (Vec<RunPoint<T>>, Vec<&'a RunPoint<T>>);
    let mut groups: BTreeMap<(&AbilityId, u64, u64), Group<T>> = BTreeMap::new();
    for p in points {
        let g = groups.entry(p.setting()).or_default();
        match p.split {
            Split::Valid => g.0.push(p.clone()),
            Split::Test => g.1.push(p),
            Split::Train => {
                return Err(Error::invalid("run points are valid or test observations"))
            }
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((ability, n, d), (valid, test)) in groups {
        let chosen = if valid.is_empty() {
            match test.as_slice() {
                [only] => *only,
                [] => unreachable!("group has at least one point"),
                _ => {
                    return Err(Error::invalid(format!(
                        "`{ability}` at N={n}, D={d} has several test epochs and no valid points"
                    )))
                }
            }
        } else {
            let epoch = select_checkpoint_after(&valid, after)?;
            let hits: Vec<_> = test.iter().filter(|p| p.epoch == epoch).collect();
            match hits.as_slice() {
                [only] => **only,
                [] => {
                    return Err(Error::invalid(format!(
                        "`{ability}` at N={n}, D={d}: no test point for selected epoch {epoch}"
                    )))
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "`{ability}` at N={n}, D={d}: epoch {epoch} has several test points"
                    )))
                }
            }
        };
        out.push(chosen.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScoreSettings {
    pub length_normalize: bool,
    pub normalizer: MatchNormalizer,
    pub decoding: Decoding,
    /// Also fetch gold log-probabilities for exact-match items so every
    /// ability gets a mean per-token test loss.
    pub compute_loss: bool,
}

/// Result for one instance, as written to the per-instance score log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InstanceScore<T: Scalar = f64> {
    pub ability: AbilityId,
    #[serde(flatten)]
    pub eval: EvalScore<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    /// `(Σ -log p, T)` of the gold continuation, when fetched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_nll: Option<(T, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AbilityScore<T: Scalar = f64> {
    pub ability: AbilityId,
    pub accuracy: T,
    pub count: usize,
    /// Mean per-token negative log-likelihood of gold outputs.
    pub loss: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetScores<T: Scalar = f64> {
    pub instances: Vec<InstanceScore<T>>,
    /// Catalog order.
    pub abilities: Vec<AbilityScore<T>>,
}

fn score_instance<T: Scalar>(
    inst: &InstructionInstance,
    provider: &dyn Provider,
    settings: &ScoreSettings,
) -> Result<InstanceScore<T>> {
    let fetch = |cand: CandidateId, text: &str| -> Result<TokenLogProbRecord<T>> {
        let key = RecordKey::new(inst.id.clone(), cand);
        let rec = provider.fetch_logprobs(&inst.instruction, text, &key)?;
        if rec.key() != key {
            return Err(Error::MalformedResponse(format!(
                "asked for ({}, {}), got ({}, {})",
                key.instance_id, key.candidate_id, rec.instance_id, rec.candidate_id
            )));
        }
        Ok(rec.cast())
    };
    let nll = |r: &TokenLogProbRecord<T>| (log_ppl(r.logprobs(), false), r.token_count());

    match inst.kind {
        InstanceKind::ExactMatch => {
            let prediction = provider.generate(&inst.id, &inst.instruction, &settings.decoding)?;
            let hit = settings.normalizer.apply(&prediction) == settings.normalizer.apply(&inst.gold);
            let gold_nll = if settings.compute_loss {
                Some(nll(&fetch(CandidateId::Gold, &inst.gold)?))
            } else {
                None
            };
            Ok(InstanceScore {
                ability: inst.ability.clone(),
                eval: EvalScore {
                    instance_id: inst.id.clone(),
                    score: u8::from(hit),
                    ppl_gold: None,
                    ppl_distractors: Vec::new(),
                },
                prediction: Some(prediction),
                gold_nll,
            })
        }
        InstanceKind::OpenEnded => {
            if inst.distractors.is_empty() {
                return Err(Error::invalid(format!(
                    "open-ended instance `{}` has no distractors",
                    inst.id
                )));
            }
            let gold = fetch(CandidateId::Gold, &inst.gold)?;
            let distractors = inst
                .distractors
                .iter()
                .enumerate()
                .map(|(j, d)| fetch(CandidateId::Distractor(j), &d.text))
                .collect::<Result<Vec<_>>>()?;
            let eval = score_open_ended(&gold, &distractors, settings.length_normalize)?;
            Ok(InstanceScore {
                ability: inst.ability.clone(),
                eval,
                prediction: None,
                gold_nll: Some(nll(&gold)),
            })
        }
    }
}

/// Scores every instance, issuing up to `provider.max_in_flight()` requests
/// at once. Aggregates are computed in input order, so they do not depend on
/// completion order. Any instance failure fails the whole run.
pub fn score_dataset<T: Scalar>(
    instances: &[&InstructionInstance],
    provider: &dyn Provider,
    settings: &ScoreSettings,
) -> Result<DatasetScores<T>> {
    if instances.is_empty() {
        return Err(Error::Empty("instances to score"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(provider.max_in_flight().max(1))
        .build()
        .map_err(|e| Error::Provider(e.to_string()))?;
    let results: Vec<Result<InstanceScore<T>>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                score_instance(inst, provider, settings).map_err(|e| Error::InstanceFailed {
                    instance_id: inst.id.clone(),
                    source: Box::new(e),
                })
            })
            .collect()
    });
    let instances = results.into_iter().collect::<Result<Vec<_>>>()?;
    let abilities = aggregate(&instances, settings.compute_loss);
    Ok(DatasetScores {
        instances,
        abilities,
    })
}

fn aggregate<T: Scalar>(scores: &[InstanceScore<T>], with_loss: bool) -> Vec<AbilityScore<T>> {
    #[derive(Default)]
    struct Acc<T> {
        hits: usize,
        count: usize,
        nll: T,
        tokens: usize,
        complete: bool,
    }
    let mut by_ability: BTreeMap<&AbilityId, Acc<T>> = BTreeMap::new();
    for s in scores {
        let a = by_ability.entry(&s.ability).or_insert_with(|| Acc {
            complete: true,
            ..Default::default()
        });
        a.hits += usize::from(s.eval.score);
        a.count += 1;
        match s.gold_nll {
            Some((nll, t)) => {
                a.nll = a.nll + nll;
                a.tokens += t;
            }
            None => a.complete = false,
        }
    }
    by_ability
        .into_iter()
        .map(|(ability, a)| AbilityScore {
            ability: ability.clone(),
            accuracy: T::from_usize(a.hits).unwrap() / T::from_usize(a.count).unwrap(),
            count: a.count,
            loss: (with_loss && a.complete && a.tokens > 0)
                .then(|| a.nll / T::from_usize(a.tokens).unwrap()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(id: &str, cand: CandidateId, lps: &[f64]) -> TokenLogProbRecord<f64> {
        TokenLogProbRecord::new(RecordKey::new(id, cand), lps.to_vec()).unwrap()
    }

    /// Record whose unnormalized PPL is exactly `target` (single token).
    fn with_ppl(cand: CandidateId, target: f64) -> TokenLogProbRecord<f64> {
        rec("q", cand, &[-target.ln()])
    }

    #[test]
    fn ppl_examples() {
        let zero = rec("q", CandidateId::Gold, &[0.0, 0.0, 0.0]);
        assert_eq!(ppl(&zero, false), 1.0);
        let r = rec("q", CandidateId::Gold, &[-0.5, -1.5]);
        assert_relative_eq!(ppl(&r, false), 7.389_056_098_930_65, epsilon = 1e-12);
        assert_relative_eq!(ppl(&r, true), std::f64::consts::E, epsilon = 1e-12);
    }

    #[test]
    fn ppl_generic_over_f32() {
        let r = rec("q", CandidateId::Gold, &[-0.5, -1.5]).cast::<f32>();
        assert!((ppl(&r, false) - 2.0f32.exp()).abs() < 1e-5);
    }

    #[test]
    fn open_ended_examples() {
        let gold = with_ppl(CandidateId::Gold, 7.389);
        let ds = [
            with_ppl(CandidateId::Distractor(0), 12.2),
            with_ppl(CandidateId::Distractor(1), 9.1),
        ];
        assert_eq!(score_open_ended(&gold, &ds, false).unwrap().score, 1);

        let tie = [rec("q", CandidateId::Distractor(0), gold.logprobs())];
        assert_eq!(score_open_ended(&gold, &tie, false).unwrap().score, 0);

        let gold = with_ppl(CandidateId::Gold, 10.0);
        let ds = [
            with_ppl(CandidateId::Distractor(0), 7.0),
            with_ppl(CandidateId::Distractor(1), 30.0),
        ];
        assert_eq!(score_open_ended(&gold, &ds, false).unwrap().score, 0);
    }

    #[test]
    fn open_ended_errors() {
        let gold = rec("a", CandidateId::Gold, &[-1.0]);
        assert!(score_open_ended(&gold, &[], false).is_err());
        let other = rec("b", CandidateId::Distractor(0), &[-2.0]);
        assert!(score_open_ended(&gold, &[other], false).is_err());
    }

    #[test]
    fn huge_unnormalized_ppl_still_scores() {
        let gold = rec("q", CandidateId::Gold, &vec![-2.0; 400]);
        let d = rec("q", CandidateId::Distractor(0), &vec![-2.5; 400]);
        let s = score_open_ended(&gold, &[d], false).unwrap();
        assert_eq!(s.score, 1);
        assert!(s.ppl_gold.unwrap().is_infinite());
    }

    #[test]
    fn exact_match_examples() {
        let m = MatchNormalizer::default();
        assert_eq!(exact_match_accuracy::<f64, _, _>(&["C"], &["C"], &m).unwrap(), 1.0);
        assert_eq!(
            exact_match_accuracy::<f64, _, _>(&["c ", "B"], &["C", "A"], &m).unwrap(),
            0.5
        );
        let empty: [&str; 0] = [];
        assert!(matches!(
            exact_match_accuracy::<f64, _, _>(&empty, &empty, &m),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            exact_match_accuracy::<f64, _, _>(&["a"], &["a", "b"], &m),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn valid_point(epoch: u32, acc: f64) -> RunPoint<f64> {
        RunPoint {
            ability: AbilityId::new("ethics").unwrap(),
            model_size: 7_000_000_000,
            data_volume: 64,
            epoch,
            split: Split::Valid,
            accuracy: acc,
        }
    }

    #[test]
    fn checkpoint_examples() {
        let pts: Vec<_> = [(1, 0.9), (6, 0.4), (7, 0.6), (8, 0.6)]
            .iter()
            .map(|&(e, a)| valid_point(e, a))
            .collect();
        assert_eq!(select_checkpoint(&pts).unwrap(), 7);

        let flat: Vec<_> = (1..=10).map(|e| valid_point(e, 0.5)).collect();
        assert_eq!(select_checkpoint(&flat).unwrap(), 6);

        let early: Vec<_> = (1..=5).map(|e| valid_point(e, 0.5)).collect();
        assert!(matches!(select_checkpoint(&early), Err(Error::NoEligibleEpoch(5))));
    }

    #[test]
    fn checkpoint_rejects_mixed_input() {
        let mut pts: Vec<_> = (1..=8).map(|e| valid_point(e, 0.5)).collect();
        pts[7].data_volume = 256;
        assert!(select_checkpoint(&pts).is_err());
        pts[7].data_volume = 64;
        pts[7].split = Split::Test;
        assert!(select_checkpoint(&pts).is_err());
        pts[7].split = Split::Valid;
        pts[7].epoch = 7;
        assert!(select_checkpoint(&pts).is_err());
    }

    #[test]
    fn run_point_validation() {
        let mut p = valid_point(1, 0.5);
        assert!(p.validate(AccuracyUnit::Fraction).is_ok());
        p.accuracy = 53.0;
        assert!(p.validate(AccuracyUnit::Fraction).is_err());
        assert!(p.validate(AccuracyUnit::Percent).is_ok());
        p.split = Split::Train;
        assert!(p.validate(AccuracyUnit::Percent).is_err());
    }

    #[test]
    fn best_test_points_follow_validation() {
        let mut pts = Vec::new();
        for e in 1..=8u32 {
            let mut v = valid_point(e, if e == 7 { 0.8 } else { 0.3 });
            pts.push(v.clone());
            v.split = Split::Test;
            v.accuracy = f64::from(e) / 10.0;
            pts.push(v);
        }
        let best = best_test_points(&pts).unwrap();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].epoch, 7);
        assert_eq!(best[0].accuracy, 0.7);

        let single: Vec<_> = pts.iter().filter(|p| p.split == Split::Test && p.epoch == 3).cloned().collect();
        assert_eq!(best_test_points(&single).unwrap()[0].epoch, 3);
        let tests_only: Vec<_> = pts.iter().filter(|p| p.split == Split::Test).cloned().collect();
        assert!(best_test_points(&tests_only).is_err());
        let no_test_at_7: Vec<_> = pts.iter().filter(|p| !(p.split == Split::Test && p.epoch == 7)).cloned().collect();
        assert!(best_test_points(&no_test_at_7).is_err());
    }
}
