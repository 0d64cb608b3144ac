//! Scaling sensitivities.
//!
//! Accuracy is modelled as `ACC = α · ln(scale) + α · c`, where the scale is
//! either the parameter count N or the per-ability data volume D. The slope
//! α is the ability's sensitivity along that axis; it is estimated by
//! ordinary least squares on the group means produced by
//! [`average_over_nuisance`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AbilityId, Split};
use crate::error::{Error, Result};
use crate::eval::{AccuracyUnit, RunPoint};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Model size N.
    Parameter,
    /// Per-ability data volume D.
    Data,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::Parameter, Axis::Data];

    fn scale_of<T: Scalar>(self, p: &RunPoint<T>) -> u64 {
        match self {
            Axis::Parameter => p.model_size,
            Axis::Data => p.data_volume,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Parameter => "parameter",
            Axis::Data => "data",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parameter" => Ok(Axis::Parameter),
            "data" => Ok(Axis::Data),
            other => Err(Error::invalid(format!("unknown axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SensitivityFit<T: Scalar = f64> {
    pub ability: AbilityId,
    pub axis: Axis,
    /// Slope against the natural log of the scale.
    pub alpha: T,
    /// Intercept divided by alpha; `None` when alpha is exactly zero.
    pub c: Option<T>,
    pub r_squared: T,
    pub points_used: usize,
    pub unit: AccuracyUnit,
}

impl<T: Scalar> SensitivityFit<T> {
    /// The regression intercept, `α · c`.
    pub fn intercept(&self) -> T {
        self.c.map_or(T::zero(), |c| c * self.alpha)
    }
}

/// Test-split points of one ability, grouped by the axis scale and averaged
/// over the other scale. Sorted by scale. Each (N, D) setting may appear
/// once.
pub fn average_over_nuisance<T: Scalar>(points: &[RunPoint<T>], axis: Axis) -> Result<Vec<(u64, T)>> {
    let first = points.first().ok_or(Error::Empty("run points"))?;
    let mut settings = BTreeSet::new();
    let mut groups: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    for p in points {
        if p.ability != first.ability {
            return Err(Error::invalid(format!(
                "mixed abilities `{}` and `{}`",
                first.ability, p.ability
            )));
        }
        if p.split != Split::Test {
            return Err(Error::invalid("sensitivity fits use test-split points"));
        }
        if !settings.insert((p.model_size, p.data_volume)) {
            return Err(Error::invalid(format!(
                "`{}` has more than one point at N={}, D={}",
                p.ability, p.model_size, p.data_volume
            )));
        }
        groups.entry(axis.scale_of(p)).or_default().push(p.accuracy);
    }
    Ok(groups
        .into_iter()
        .map(|(scale, mut accs)| {
            // Summation order fixed so the mean does not depend on input order.
            accs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let n = T::from_usize(accs.len()).unwrap();
            (scale, accs.into_iter().sum::<T>() / n)
        })
        .collect())
}

/// OLS of accuracy on `ln(scale)`.
pub fn fit_sensitivity<T: Scalar>(
    pairs: &[(T, T)],
    ability: AbilityId,
    axis: Axis,
    unit: AccuracyUnit,
) -> Result<SensitivityFit<T>> {
    for &(scale, acc) in pairs {
        if !(scale.is_finite() && scale > T::zero()) {
            return Err(Error::OutOfRange {
                what: format!("scale for `{ability}`"),
                value: scale.to_f64_lossy(),
            });
        }
        unit.check(|| format!("accuracy for `{ability}`"), acc)?;
    }
    let mut distinct: Vec<T> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::TooFewScales(distinct.len()));
    }

    let n = T::from_usize(pairs.len()).unwrap();
    let xs: Vec<T> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<T> = pairs.iter().map(|p| p.1).collect();
    let x_mean = xs.iter().copied().sum::<T>() / n;
    let y_mean = if ys.iter().all(|&y| y == ys[0]) {
        ys[0]
    } else {
        ys.iter().copied().sum::<T>() / n
    };
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(&ys) {
        let dx = x - x_mean;
        let dy = y - y_mean;
        sxx = sxx + dx * dx;
        sxy = sxy + dx * dy;
        syy = syy + dy * dy;
    }
    let alpha = sxy / sxx;
    let intercept = y_mean - alpha * x_mean;
    let ss_res: T = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + alpha * x);
            r * r
        })
        .sum();
    let r_squared = if syy == T::zero() {
        T::one()
    } else {
        (T::one() - ss_res / syy).max(T::zero()).min(T::one())
    };
    Ok(SensitivityFit {
        ability,
        axis,
        alpha,
        c: (alpha != T::zero()).then(|| intercept / alpha),
        r_squared,
        points_used: pairs.len(),
        unit,
    })
}

/// Min-max normalization of alpha across fits of one axis.
pub fn normalize_sensitivities<T: Scalar>(fits: &[SensitivityFit<T>]) -> Result<BTreeMap<AbilityId, T>> {
    if fits.len() < 2 {
        return Err(Error::DegenerateRange);
    }
    let axis = fits[0].axis;
    let mut seen = BTreeSet::new();
    for f in fits {
        if f.axis != axis {
            return Err(Error::invalid("cannot normalize fits of different axes together"));
        }
        if !seen.insert(&f.ability) {
            return Err(Error::invalid(format!("duplicate fit for `{}`", f.ability)));
        }
    }
    let lo = fits.iter().map(|f| f.alpha).fold(T::infinity(), T::min);
    let hi = fits.iter().map(|f| f.alpha).fold(T::neg_infinity(), T::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::DegenerateRange);
    }
    Ok(fits
        .iter()
        .map(|f| (f.ability.clone(), (f.alpha - lo) / (hi - lo)))
        .collect())
}

/// One row of the fits table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitRow<T: Scalar = f64> {
    pub ability: AbilityId,
    pub axis: Axis,
    pub alpha: T,
    pub c: Option<T>,
    pub r_squared: T,
    pub points_used: usize,
    pub normalized_alpha: Option<T>,
}

/// Fits every ability along both axes from test points (one per setting).
/// (ability, axis) pairs with fewer than two distinct scales are skipped
/// with a warning. Normalization is per axis and left empty when that axis
/// has a degenerate range.
pub fn fit_all<T: Scalar>(test_points: &[RunPoint<T>], unit: AccuracyUnit) -> Result<Vec<FitRow<T>>> {
    let mut by_ability: BTreeMap<&AbilityId, Vec<RunPoint<T>>> = BTreeMap::new();
    for p in test_points {
        by_ability.entry(&p.ability).or_default().push(p.clone());
    }
    let mut rows = Vec::new();
    for axis in Axis::BOTH {
        let mut fits = Vec::new();
        for (ability, points) in &by_ability {
            let pairs: Vec<(T, T)> = average_over_nuisance(points, axis)?
                .into_iter()
                .map(|(s, a)| (T::from_u64(s).unwrap(), a))
                .collect();
            match fit_sensitivity(&pairs, (*ability).clone(), axis, unit) {
                Ok(f) => fits.push(f),
                Err(Error::TooFewScales(n)) => {
                    log::warn!("skipping {axis} fit for `{ability}`: {n} distinct scale(s)");
                }
                Err(e) => return Err(e),
            }
        }
        let norm = match normalize_sensitivities(&fits) {
            Ok(m) => m,
            Err(Error::DegenerateRange) => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        rows.extend(fits.into_iter().map(|f| FitRow {
            normalized_alpha: norm.get(&f.ability).copied(),
            ability: f.ability,
            axis: f.axis,
            alpha: f.alpha,
            c: f.c,
            r_squared: f.r_squared,
            points_used: f.points_used,
        }));
    }
    Ok(rows)
}
