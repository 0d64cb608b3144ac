//! The cross-ability accuracy table.
//!
//! File form is a single JSON record:
//!
//! ```text
//! {"unit": "fraction",
//!  "abilities": ["a", "b"],
//!  "acc": [[0.6, 0.3], [0.2, 0.7]],
//!  "foundation": [0.25, 0.25],
//!  "loss": [1.9, 2.4]}
//! ```
//!
//! `acc[i][j]` is the accuracy on ability `j` of the model fine-tuned only on
//! ability `i`; `foundation[j]` is the untuned model on `j`; `loss[i]` is the
//! mean per-token test loss of the model tuned on `i`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::AccuracyUnit;
use crate::corpus::AbilityId;
use crate::error::{Error, Result};
use crate::Scalar;

/// Reserved `trained_on` value for foundation-model rows in transfer tables.
pub const FOUNDATION: &str = "foundation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawMatrix<T: Scalar> {
    #[serde(default)]
    unit: AccuracyUnit,
    abilities: Vec<AbilityId>,
    acc: Vec<Vec<T>>,
    foundation: Vec<T>,
    loss: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "RawMatrix<T>", into = "RawMatrix<T>")]
pub struct AccuracyMatrix<T: Scalar = f64> {
    unit: AccuracyUnit,
    abilities: Vec<AbilityId>,
    acc: Vec<Vec<T>>,
    foundation: Vec<T>,
    loss: Vec<T>,
}

impl<T: Scalar> TryFrom<RawMatrix<T>> for AccuracyMatrix<T> {
    type Error = Error;
    fn try_from(r: RawMatrix<T>) -> Result<Self> {
        AccuracyMatrix::new(r.unit, r.abilities, r.acc, r.foundation, r.loss)
    }
}

impl<T: Scalar> From<AccuracyMatrix<T>> for RawMatrix<T> {
    fn from(m: AccuracyMatrix<T>) -> Self {
        RawMatrix {
            unit: m.unit,
            abilities: m.abilities,
            acc: m.acc,
            foundation: m.foundation,
            loss: m.loss,
        }
    }
}

impl<T: Scalar> AccuracyMatrix<T> {
    pub fn new(
        unit: AccuracyUnit,
        abilities: Vec<AbilityId>,
        acc: Vec<Vec<T>>,
        foundation: Vec<T>,
        loss: Vec<T>,
    ) -> Result<Self> {
        let k = abilities.len();
        if k == 0 {
            return Err(Error::Empty("abilities"));
        }
        let mut seen = HashSet::new();
        for a in &abilities {
            if !seen.insert(a) {
                return Err(Error::Catalog(format!("duplicate ability `{a}` in matrix")));
            }
        }
        if acc.len() != k || acc.iter().any(|row| row.len() != k) {
            return Err(Error::DimensionMismatch(format!("acc must be {k}x{k}")));
        }
        if foundation.len() != k || loss.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "foundation and loss must have length {k}"
            )));
        }
        for (i, row) in acc.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                unit.check(|| format!("acc[{}][{}]", abilities[i], abilities[j]), v)?;
            }
        }
        for (j, &v) in foundation.iter().enumerate() {
            unit.check(|| format!("foundation[{}]", abilities[j]), v)?;
        }
        for (i, &v) in loss.iter().enumerate() {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(Error::OutOfRange {
                    what: format!("loss[{}]", abilities[i]),
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(AccuracyMatrix {
            unit,
            abilities,
            acc,
            foundation,
            loss,
        })
    }

    pub fn unit(&self) -> AccuracyUnit {
        self.unit
    }

    pub fn abilities(&self) -> &[AbilityId] {
        &self.abilities
    }

    pub fn k(&self) -> usize {
        self.abilities.len()
    }

    /// Accuracy on `evaluated` of the model trained on `trained`.
    pub fn acc(&self, trained: usize, evaluated: usize) -> T {
        self.acc[trained][evaluated]
    }

    pub fn foundation(&self, j: usize) -> T {
        self.foundation[j]
    }

    pub fn loss(&self, i: usize) -> T {
        self.loss[i]
    }

    pub fn index_of(&self, a: &AbilityId) -> Option<usize> {
        self.abilities.iter().position(|x| x == a)
    }

    /// Same data under a new ability order: new index `n` holds old index
    /// `order[n]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let k = self.k();
        let distinct: BTreeSet<_> = order.iter().copied().collect();
        if order.len() != k || distinct.len() != k || distinct.iter().any(|&i| i >= k) {
            return Err(Error::DimensionMismatch("order is not a permutation".into()));
        }
        AccuracyMatrix::new(
            self.unit,
            order.iter().map(|&o| self.abilities[o].clone()).collect(),
            order
                .iter()
                .map(|&r| order.iter().map(|&c| self.acc[r][c]).collect())
                .collect(),
            order.iter().map(|&o| self.foundation[o]).collect(),
            order.iter().map(|&o| self.loss[o]).collect(),
        )
    }
}

/// One row of a transfer table: `trained_on,evaluated,accuracy`.
/// `trained_on = "foundation"` marks the untuned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TransferCell<T: Scalar = f64> {
    pub trained_on: String,
    pub evaluated: AbilityId,
    pub accuracy: T,
}

/// One row of a loss table: `ability,loss`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LossRow<T: Scalar = f64> {
    pub ability: AbilityId,
    pub loss: T,
}

/// Assembles a matrix in catalog order from transfer cells (foundation rows
/// included) and per-ability losses. Every cell must be present exactly once.
pub fn build_accuracy_matrix<T: Scalar>(
    cells: &[TransferCell<T>],
    losses: &[LossRow<T>],
    unit: AccuracyUnit,
) -> Result<AccuracyMatrix<T>> {
    let mut abilities: BTreeSet<AbilityId> = BTreeSet::new();
    let mut table: BTreeMap<(Option<AbilityId>, AbilityId), T> = BTreeMap::new();
    for c in cells {
        let trained = if c.trained_on == FOUNDATION {
            None
        } else {
            let a = AbilityId::new(c.trained_on.as_str())?;
            abilities.insert(a.clone());
            Some(a)
        };
        abilities.insert(c.evaluated.clone());
        if table
            .insert((trained.clone(), c.evaluated.clone()), c.accuracy)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "duplicate cell ({}, {})",
                c.trained_on, c.evaluated
            )));
        }
    }
    let mut loss_map = BTreeMap::new();
    for l in losses {
        abilities.insert(l.ability.clone());
        if loss_map.insert(l.ability.clone(), l.loss).is_some() {
            return Err(Error::invalid(format!("duplicate loss for `{}`", l.ability)));
        }
    }

    let abilities: Vec<AbilityId> = abilities.into_iter().collect();
    let missing = |trained: &str, evaluated: &AbilityId| Error::MissingCell {
        trained: trained.to_owned(),
        evaluated: evaluated.to_string(),
    };
    let mut acc = Vec::with_capacity(abilities.len());
    for i in &abilities {
        let mut row = Vec::with_capacity(abilities.len());
        for j in &abilities {
            row.push(
                *table
                    .get(&(Some(i.clone()), j.clone()))
                    .ok_or_else(|| missing(i.as_str(), j))?,
            );
        }
        acc.push(row);
    }
    let foundation = abilities
        .iter()
        .map(|j| table.get(&(None, j.clone())).copied().ok_or_else(|| missing(FOUNDATION, j)))
        .collect::<Result<Vec<_>>>()?;
    let loss = abilities
        .iter()
        .map(|a| {
            loss_map.get(a).copied().ok_or_else(|| Error::MissingCell {
                trained: a.to_string(),
                evaluated: "loss".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AccuracyMatrix::new(unit, abilities, acc, foundation, loss)
}
