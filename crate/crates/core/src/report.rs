//! Strategy comparison tables and accuracy-vs-volume curves.
//!
//! A score table lists one row per (group, column, strategy):
//!
//! ```text
//! group,column,strategy,role,score,published_flag
//! AGIEval-0shot,CLLaMA,Baseline,baseline,34.64,
//! AGIEval-0shot,CLLaMA,Reconstruct,candidate,35.43,true
//! ```
//!
//! Each (group, column) has exactly one baseline row. A candidate is flagged
//! as improved when its score is strictly greater than the baseline's. When
//! a published flag is supplied and disagrees, the row is annotated instead
//! of silently following either side.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::AbilityId;
use crate::error::{Error, Result};
use crate::eval::RunPoint;
use crate::Scalar;

pub const PUBLISHED_DIFFERS: &str = "published_differs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Baseline,
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreRow<T: Scalar = f64> {
    pub group: String,
    pub column: String,
    pub strategy: String,
    pub role: Role,
    pub score: T,
    #[serde(default)]
    pub published_flag: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ComparisonRow<T: Scalar = f64> {
    pub group: String,
    pub column: String,
    pub strategy: String,
    pub score: T,
    pub baseline_score: T,
    pub improved: bool,
    pub published_flag: Option<bool>,
    pub annotation: String,
}

/// Flags every row against its (group, column) baseline, in input order.
pub fn compare<T: Scalar>(rows: &[ScoreRow<T>]) -> Result<Vec<ComparisonRow<T>>> {
    let mut baselines: BTreeMap<(&str, &str), T> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.role == Role::Baseline) {
        if baselines
            .insert((r.group.as_str(), r.column.as_str()), r.score)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "({}, {}) has more than one baseline",
                r.group, r.column
            )));
        }
    }
    rows.iter()
        .map(|r| {
            let base = *baselines
                .get(&(r.group.as_str(), r.column.as_str()))
                .ok_or_else(|| {
                    Error::invalid(format!("({}, {}) has no baseline row", r.group, r.column))
                })?;
            let improved = r.role == Role::Candidate && r.score > base;
            let differs = r.published_flag.is_some_and(|p| p != improved);
            Ok(ComparisonRow {
                group: r.group.clone(),
                column: r.column.clone(),
                strategy: r.strategy.clone(),
                score: r.score,
                baseline_score: base,
                improved,
                published_flag: r.published_flag,
                annotation: if differs { PUBLISHED_DIFFERS.into() } else { String::new() },
            })
        })
        .collect()
}

/// One point of an accuracy-vs-volume curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CurveRow<T: Scalar = f64> {
    pub ability: AbilityId,
    pub model_size: u64,
    pub data_volume: u64,
    pub epoch: u32,
    pub accuracy: T,
}

/// Curve rows sorted by ability (catalog order), model size, then volume.
pub fn curves<T: Scalar>(test_points: &[RunPoint<T>]) -> Vec<CurveRow<T>> {
    let mut rows: Vec<CurveRow<T>> = test_points
        .iter()
        .map(|p| CurveRow {
            ability: p.ability.clone(),
            model_size: p.model_size,
            data_volume: p.data_volume,
            epoch: p.epoch,
            accuracy: p.accuracy,
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.ability, a.model_size, a.data_volume).cmp(&(&b.ability, b.model_size, b.data_volume))
    });
    rows
}

/// Per-ability (volume, accuracy) pairs averaged over model sizes, the
/// input to plateau detection.
pub fn volume_curves<T: Scalar>(test_points: &[RunPoint<T>]) -> Result<BTreeMap<AbilityId, Vec<(u64, T)>>> {
    let mut by_ability: BTreeMap<AbilityId, Vec<RunPoint<T>>> = BTreeMap::new();
    for p in test_points {
        by_ability.entry(p.ability.clone()).or_default().push(p.clone());
    }
    by_ability
        .into_iter()
        .map(|(a, pts)| Ok((a, crate::scaling::average_over_nuisance(&pts, crate::scaling::Axis::Data)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(group: &str, strategy: &str, role: Role, score: f64, flag: Option<bool>) -> ScoreRow<f64> {
        ScoreRow {
            group: group.into(),
            column: "c".into(),
            strategy: strategy.into(),
            role,
            score,
            published_flag: flag,
        }
    }

    #[test]
    fn flags_by_arithmetic() {
        let rows = vec![
            row("g", "Baseline", Role::Baseline, 34.64, None),
            row("g", "Reconstruct", Role::Candidate, 35.43, Some(true)),
            row("g", "Maximum", Role::Candidate, 34.0, Some(true)),
        ];
        let out = compare(&rows).unwrap();
        assert!(!out[0].improved);
        assert!(out[1].improved);
        assert_eq!(out[1].annotation, "");
        assert!(!out[2].improved);
        assert_eq!(out[2].annotation, PUBLISHED_DIFFERS);
    }

    #[test]
    fn equal_score_is_not_improvement() {
        let rows = vec![
            row("g", "Baseline", Role::Baseline, 30.0, None),
            row("g", "Same", Role::Candidate, 30.0, None),
        ];
        assert!(!compare(&rows).unwrap()[1].improved);
    }

    #[test]
    fn baseline_errors() {
        let none = vec![row("g", "x", Role::Candidate, 1.0, None)];
        assert!(compare(&none).is_err());
        let two = vec![
            row("g", "a", Role::Baseline, 1.0, None),
            row("g", "b", Role::Baseline, 2.0, None),
        ];
        assert!(compare(&two).is_err());
    }
}
