use std::collections::BTreeMap;

use proptest::prelude::*;
use tunescale_core::corpus::AbilityId;
use tunescale_core::planner::{
    add_synthetic, classify_abilities, plan_maximum, plan_reconstruct, read_plan, write_plan,
    AbilityClass, ClassKind, ClassThresholds, Strategy as Plan,
};

fn class_strategy() -> impl Strategy<Value = Vec<AbilityClass>> {
    proptest::collection::vec(0u8..3, 1..12).prop_map(|kinds| {
        kinds
            .into_iter()
            .enumerate()
            .map(|(i, k)| AbilityClass {
                ability: AbilityId::new(format!("skill_{i:02}")).unwrap(),
                class: match k {
                    0 => ClassKind::Resistant { floor: 64 },
                    1 => ClassKind::Saturated { cap: 1000 },
                    _ => ClassKind::Responsive,
                },
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn reconstruct_spends_exact_budget(
        classes in class_strategy(), extra in 0u64..100_000, seed in any::<u64>(),
    ) {
        prop_assume!(classes.iter().any(|c| c.class == ClassKind::Responsive));
        let reserved: u64 = classes
            .iter()
            .map(|c| match c.class {
                ClassKind::Resistant { floor } => floor,
                ClassKind::Saturated { cap } => cap,
                ClassKind::Responsive => 0,
            })
            .sum();
        let budget = reserved + extra;
        let plan = plan_reconstruct(&classes, budget, None).unwrap();
        prop_assert_eq!(plan.total(), budget);
        prop_assert_eq!(plan.counts.len(), classes.len());

        let responsive: Vec<u64> = classes
            .iter()
            .filter(|c| c.class == ClassKind::Responsive)
            .map(|c| plan.counts[&c.ability])
            .collect();
        let lo = *responsive.iter().min().unwrap();
        let hi = *responsive.iter().max().unwrap();
        prop_assert!(hi - lo <= 1);

        let mut shuffled = classes.clone();
        let mut rng = tunescale_core::rng::SplitMix64::new(seed);
        for i in (1..shuffled.len()).rev() {
            let j = rng.bounded(i as u64 + 1) as usize;
            shuffled.swap(i, j);
        }
        prop_assert_eq!(plan_reconstruct(&shuffled, budget, None).unwrap(), plan.clone());

        let mut buf = Vec::new();
        write_plan(&plan, &mut buf).unwrap();
        prop_assert_eq!(read_plan(buf.as_slice()).unwrap(), plan);
    }

    #[test]
    fn reconstruct_below_reserve_is_infeasible(classes in class_strategy()) {
        let reserved: u64 = classes
            .iter()
            .map(|c| match c.class {
                ClassKind::Resistant { floor } => floor,
                ClassKind::Saturated { cap } => cap,
                ClassKind::Responsive => 0,
            })
            .sum();
        prop_assume!(reserved > 0 && classes.iter().any(|c| c.class == ClassKind::Responsive));
        prop_assert!(plan_reconstruct(&classes, reserved - 1, None).is_err());
    }

    #[test]
    fn synthetic_leaves_human_counts(quota in 0u64..100_000) {
        let av: BTreeMap<AbilityId, u64> =
            [("a", 500u64), ("b", 700)].into_iter().map(|(k, v)| (AbilityId::new(k).unwrap(), v)).collect();
        let base = plan_maximum(&av, &BTreeMap::new()).unwrap();
        let plan = add_synthetic(&base, quota, 0.25);
        prop_assert_eq!(&plan.counts, &base.counts);
        prop_assert_eq!(plan.synthetic_count, quota);
        prop_assert_eq!(!plan.warnings.is_empty(), quota as f64 > 300.0);
    }
}

#[test]
fn classification_precedence() {
    let names = ["flat", "plateau", "growing", "flat_but_plateau"];
    let map = |vals: [f64; 4]| -> BTreeMap<AbilityId, f64> {
        names.iter().zip(vals).map(|(n, v)| (AbilityId::new(*n).unwrap(), v)).collect()
    };
    let plateau: BTreeMap<AbilityId, bool> = [("plateau", true), ("flat_but_plateau", true)]
        .into_iter()
        .map(|(n, v)| (AbilityId::new(n).unwrap(), v))
        .collect();
    let classes = classify_abilities(
        &map([0.1, 0.9, 0.5, 0.2]),
        &map([0.2, 0.1, 0.0, 0.1]),
        &ClassThresholds::default(),
        &plateau,
    )
    .unwrap();
    let got: BTreeMap<&str, ClassKind> = classes.iter().map(|c| (c.ability.as_str(), c.class)).collect();
    assert_eq!(got["flat"], ClassKind::Resistant { floor: 64 });
    assert_eq!(got["flat_but_plateau"], ClassKind::Resistant { floor: 64 });
    assert_eq!(got["plateau"], ClassKind::Saturated { cap: 1000 });
    assert_eq!(got["growing"], ClassKind::Responsive);
    assert_eq!(Plan::Reconstruct.to_string(), "reconstruct");
}
