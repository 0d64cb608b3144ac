//! Complexity and Transference.
//!
//! For ability `i` of an [`AccuracyMatrix`]:
//!
//! ```text
//! complexity_i   = w1 · L_i − w2 · Σ_{j≠i} (Acc(j,i) − Acc(f,i))
//! transference_i = w  ·       Σ_{j≠i} (Acc(i,j) − Acc(j,j))
//! ```
//!
//! Complexity tracks sensitivity to parameter scaling, Transference tracks
//! sensitivity to data scaling; [`correlate`] measures how linear that
//! relationship is.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::AbilityId;
use crate::error::{Error, Result};
use crate::eval::AccuracyMatrix;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureWeights<T: Scalar = f64> {
    pub w1: T,
    pub w2: T,
    pub w: T,
}

impl<T: Scalar> FeatureWeights<T> {
    pub fn new(w1: T, w2: T, w: T) -> Result<Self> {
        for (name, v) in [("w1", w1), ("w2", w2), ("w", w)] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(Error::OutOfRange {
                    what: name.into(),
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(FeatureWeights { w1, w2, w })
    }

    /// `w1 = 1`, `w2 = w = 1/(K−1)`: transfer terms become means over the
    /// other abilities. For `K = 1` the sums are empty and both are 1.
    pub fn default_for(k: usize) -> Self {
        let share = if k > 1 {
            T::one() / T::from_usize(k - 1).unwrap()
        } else {
            T::one()
        };
        FeatureWeights {
            w1: T::one(),
            w2: share,
            w: share,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T: Scalar = f64> {
    pub ability: AbilityId,
    pub complexity: T,
    pub transference: T,
    pub weights: FeatureWeights<T>,
}

/// Per ability, in matrix order.
pub fn complexity<T: Scalar>(m: &AccuracyMatrix<T>, weights: &FeatureWeights<T>) -> Vec<T> {
    let k = m.k();
    (0..k)
        .map(|i| {
            let gain: T = (0..k)
                .filter(|&j| j != i)
                .map(|j| m.acc(j, i) - m.foundation(i))
                .sum();
            weights.w1 * m.loss(i) - weights.w2 * gain
        })
        .collect()
}

/// Per ability, in matrix order.
pub fn transference<T: Scalar>(m: &AccuracyMatrix<T>, weights: &FeatureWeights<T>) -> Vec<T> {
    let k = m.k();
    (0..k)
        .map(|i| {
            let gain: T = (0..k)
                .filter(|&j| j != i)
                .map(|j| m.acc(i, j) - m.acc(j, j))
                .sum();
            weights.w * gain
        })
        .collect()
}

pub fn features<T: Scalar>(m: &AccuracyMatrix<T>, weights: &FeatureWeights<T>) -> Vec<FeatureVector<T>> {
    complexity(m, weights)
        .into_iter()
        .zip(transference(m, weights))
        .zip(m.abilities())
        .map(|((c, t), a)| FeatureVector {
            ability: a.clone(),
            complexity: c,
            transference: t,
            weights: *weights,
        })
        .collect()
}

/// OLS of sensitivity on feature, plus Pearson's r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearRelation<T: Scalar = f64> {
    pub slope: T,
    pub intercept: T,
    pub pearson_r: T,
    pub n: usize,
}

pub fn correlate_values<T: Scalar>(features: &[T], sensitivities: &[T]) -> Result<LinearRelation<T>> {
    if features.len() != sensitivities.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: sensitivities.len(),
        });
    }
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least 2 abilities"));
    }
    let nt = T::from_usize(n).unwrap();
    let x_mean = features.iter().copied().sum::<T>() / nt;
    let y_mean = sensitivities.iter().copied().sum::<T>() / nt;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in features.iter().zip(sensitivities) {
        let dx = x - x_mean;
        let dy = y - y_mean;
        sxx = sxx + dx * dx;
        sxy = sxy + dx * dy;
        syy = syy + dy * dy;
    }
    if features.iter().all(|&x| x == features[0]) || sxx == T::zero() {
        return Err(Error::ConstantFeature);
    }
    if sensitivities.iter().all(|&y| y == sensitivities[0]) || syy == T::zero() {
        return Err(Error::ConstantSensitivity);
    }
    let slope = sxy / sxx;
    let r = sxy / (sxx * syy).sqrt();
    Ok(LinearRelation {
        slope,
        intercept: y_mean - slope * x_mean,
        pearson_r: r.max(-T::one()).min(T::one()),
        n,
    })
}

/// Pairs values by ability; both maps must cover the same abilities.
pub fn correlate<T: Scalar>(
    features: &BTreeMap<AbilityId, T>,
    sensitivities: &BTreeMap<AbilityId, T>,
) -> Result<LinearRelation<T>> {
    if features.len() != sensitivities.len() || features.keys().any(|a| !sensitivities.contains_key(a)) {
        return Err(Error::DimensionMismatch(
            "features and sensitivities cover different abilities".into(),
        ));
    }
    let xs: Vec<T> = features.values().copied().collect();
    let ys: Vec<T> = features.keys().map(|a| sensitivities[a]).collect();
    correlate_values(&xs, &ys)
}
