use std::collections::BTreeMap;

use proptest::prelude::*;
use tunescale_core::corpus::AbilityId;
use tunescale_core::eval::{AccuracyMatrix, AccuracyUnit};
use tunescale_core::features::{
    complexity, correlate, correlate_values, features, transference, FeatureWeights,
};
use tunescale_core::Error;

fn ids(k: usize) -> Vec<AbilityId> {
    (0..k).map(|i| AbilityId::new(format!("ab{i}")).unwrap()).collect()
}

fn matrix_strategy() -> impl Strategy<Value = AccuracyMatrix<f64>> {
    (2usize..7).prop_flat_map(|k| {
        (
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, k), k),
            proptest::collection::vec(0.0f64..1.0, k),
            proptest::collection::vec(0.0f64..5.0, k),
        )
            .prop_map(move |(acc, f, l)| {
                AccuracyMatrix::new(AccuracyUnit::Fraction, ids(k), acc, f, l).unwrap()
            })
    })
}

fn weights() -> impl Strategy<Value = FeatureWeights<f64>> {
    (0.01f64..3.0, 0.01f64..3.0, 0.01f64..3.0)
        .prop_map(|(a, b, c)| FeatureWeights::new(a, b, c).unwrap())
}

/// Pearson r and slope from population covariance.
fn covariance_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    (cov / vx, cov / (vx * vy).sqrt())
}

proptest! {
    #[test]
    fn complexity_and_transference_are_linear_in_weights(
        m in matrix_strategy(), a in weights(), b in weights(),
    ) {
        let sum = FeatureWeights::new(a.w1 + b.w1, a.w2 + b.w2, a.w + b.w).unwrap();
        let (ca, cb, cs) = (complexity(&m, &a), complexity(&m, &b), complexity(&m, &sum));
        let (ta, tb, ts) = (transference(&m, &a), transference(&m, &b), transference(&m, &sum));
        for i in 0..m.k() {
            prop_assert!((ca[i] + cb[i] - cs[i]).abs() < 1e-12);
            prop_assert!((ta[i] + tb[i] - ts[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn features_follow_abilities_under_permutation(
        m in matrix_strategy(), w in weights(), seed in any::<u64>(),
    ) {
        let k = m.k();
        let mut order: Vec<usize> = (0..k).collect();
        let mut rng = tunescale_core::rng::SplitMix64::new(seed);
        for i in (1..k).rev() {
            let j = rng.bounded(i as u64 + 1) as usize;
            order.swap(i, j);
        }
        let p = m.reordered(&order).unwrap();
        let before: BTreeMap<_, _> = features(&m, &w).into_iter().map(|f| (f.ability.clone(), f)).collect();
        for f in features(&p, &w) {
            let g = &before[&f.ability];
            prop_assert!((f.complexity - g.complexity).abs() < 1e-12);
            prop_assert!((f.transference - g.transference).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_transfer_ordering(
        gains in proptest::collection::btree_set(0u32..200, 3..7),
        diag in 0.2f64..0.4,
    ) {
        // Rows trained on ability i gain exactly t_i on every other ability.
        let gains: Vec<f64> = gains.into_iter().map(|g| f64::from(g) / 1000.0).collect();
        let k = gains.len();
        let acc: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { diag } else { diag + gains[i] }).collect())
            .collect();
        let m = AccuracyMatrix::new(AccuracyUnit::Fraction, ids(k), acc, vec![0.1; k], vec![1.0; k]).unwrap();
        let t = transference(&m, &FeatureWeights::default_for(k));
        for i in 0..k {
            prop_assert!((t[i] - gains[i]).abs() < 1e-12);
        }
        let mut by_t: Vec<usize> = (0..k).collect();
        by_t.sort_by(|&a, &b| t[a].partial_cmp(&t[b]).unwrap());
        let mut by_gain: Vec<usize> = (0..k).collect();
        by_gain.sort_by(|&a, &b| gains[a].partial_cmp(&gains[b]).unwrap());
        prop_assert_eq!(by_t, by_gain);
    }

    #[test]
    fn correlation_matches_covariance_oracle(
        pts in proptest::collection::vec((-10.0f64..10.0, -1.0f64..1.0), 3..15),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let spread = |v: &[f64]| v.iter().any(|&a| (a - v[0]).abs() > 1e-3);
        prop_assume!(spread(&x) && spread(&y));
        let rel = correlate_values(&x, &y).unwrap();
        let (slope, r) = covariance_oracle(&x, &y);
        prop_assert!((rel.slope - slope).abs() < 1e-9 * (1.0 + slope.abs()));
        prop_assert!((rel.pearson_r - r).abs() < 1e-9);
        prop_assert!(rel.pearson_r.abs() <= 1.0);
    }
}

#[test]
fn constant_inputs_are_named() {
    assert!(matches!(
        correlate_values(&[1.0, 1.0, 1.0], &[0.1, 0.2, 0.3]),
        Err(Error::ConstantFeature)
    ));
    assert!(matches!(
        correlate_values(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]),
        Err(Error::ConstantSensitivity)
    ));
}

#[test]
fn correlate_requires_same_abilities() {
    let a: BTreeMap<AbilityId, f64> = ids(3).into_iter().zip([1.0, 2.0, 3.0]).collect();
    let mut b = a.clone();
    assert!((correlate(&a, &b).unwrap().pearson_r - 1.0).abs() < 1e-12);
    b.remove(&ids(3)[0]);
    assert!(matches!(correlate(&a, &b), Err(Error::DimensionMismatch(_))));
}
