mod common;

use std::collections::BTreeSet;

use collateral_balance::balancer::{is_feasible, phase_decompose, Mode};
use collateral_balance::model::{priority_totals, Instance, RawInstance, RawNumber};
use collateral_balance::priority::{balance_with_priorities, lex_optimal_profile};
use collateral_balance::ratio::{frac, int, Ratio};
use collateral_balance::verification::{
    check_maximality, check_ratio_balance, check_ratio_balance_admissible, random_maximum_flow,
};
use num_traits::Zero;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Instances with up to `max` nodes per side. Each edge gets an optional
/// cap, written as a multiple of one half, and a priority in 1..=3.
fn raw_instance(max: usize) -> impl Strategy<Value = (RawInstance, Vec<Option<i64>>, Vec<u32>)> {
    (1..=max, 1..=max).prop_flat_map(|(s, a)| {
        (
            prop::collection::vec(1i64..=12, s),
            prop::collection::vec(1i64..=12, a),
            prop::collection::vec(prop::option::weighted(0.6, (0i64..=3, 0i64..=16)), s * a),
            prop::collection::vec(1u32..=3, s * a),
        )
            .prop_map(move |(values, exposures, cells, priorities)| {
                let mut edges = Vec::new();
                let mut caps = Vec::new();
                let mut prios = Vec::new();
                for (cell, (slot, p)) in cells.into_iter().zip(priorities).enumerate() {
                    if let Some((kind, half_units)) = slot {
                        edges.push((cell / a + 1, cell % a + 1));
                        caps.push((kind == 0).then_some(half_units));
                        prios.push(p);
                    }
                }
                (RawInstance::from_integers(&values, &exposures, &edges), caps, prios)
            })
    })
}

fn with_caps(mut raw: RawInstance, caps: &[Option<i64>]) -> Instance {
    for (edge, cap) in raw.edges.iter_mut().zip(caps) {
        edge.cap = cap.map(|h| RawNumber::Text(format!("{}.{}", h / 2, if h % 2 == 1 { 5 } else { 0 })));
    }
    Instance::from_raw(&raw).unwrap()
}

/// Priorities relabelled densely so they form 1..=P.
fn with_priorities(mut raw: RawInstance, priorities: &[u32]) -> Instance {
    let used: BTreeSet<u32> = priorities.iter().copied().collect();
    let rank = |p: u32| used.iter().position(|&q| q == p).unwrap() as u32 + 1;
    for (edge, &p) in raw.edges.iter_mut().zip(priorities) {
        edge.priority = Some(rank(p));
    }
    Instance::from_raw(&raw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn feasibility_is_monotone((raw, caps, _) in raw_instance(5)) {
        let inst = with_caps(raw, &caps);
        let mut seen_infeasible = false;
        for k in 0..=12 {
            let feasible = is_feasible(&inst, &frac(k, 12), Mode::Standard).unwrap().feasible;
            prop_assert!(!(feasible && seen_infeasible), "feasible again at {k}/12");
            seen_infeasible |= !feasible;
        }
    }

    #[test]
    fn risk_follows_phase_lambda((raw, caps, _) in raw_instance(6)) {
        let inst = with_caps(raw, &caps);
        let report = phase_decompose(&inst).unwrap();
        let mut covered = BTreeSet::new();
        for (k, phase) in report.phases.iter().enumerate() {
            if k > 0 {
                prop_assert!(phase.lambda > report.phases[k - 1].lambda);
            }
            for &j in &phase.tight_accounts {
                prop_assert!(covered.insert(j), "account {j} in two phases");
                prop_assert_eq!(&report.risk_ratio[j], &(int(1) - &phase.lambda));
            }
        }
        prop_assert_eq!(covered.len(), inst.accounts.len());
    }

    #[test]
    fn output_is_balanced_and_maximum((raw, caps, _) in raw_instance(6)) {
        let inst = with_caps(raw, &caps);
        let report = phase_decompose(&inst).unwrap();
        prop_assert!(check_ratio_balance(&inst, &report.flow).unwrap().is_empty());
        prop_assert!(check_maximality(&inst, &report.flow).unwrap().is_zero());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn priority_profile_is_lexicographically_maximal((raw, _, prios) in raw_instance(4), seed in any::<u64>()) {
        prop_assume!(!raw.edges.is_empty());
        let inst = with_priorities(raw, &prios);
        let lex = lex_optimal_profile(&inst).unwrap();
        prop_assert_eq!(&priority_totals(&inst, &lex.flow), &lex.profile);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let f = random_maximum_flow(&inst, &mut rng);
            prop_assert!(priority_totals(&inst, &f) <= lex.profile);
            let g = common::random_feasible_flow(&inst, &mut rng);
            prop_assert!(priority_totals(&inst, &g) <= lex.profile);
        }
    }

    #[test]
    fn priority_balance_is_admissibly_balanced((raw, _, prios) in raw_instance(4)) {
        prop_assume!(!raw.edges.is_empty());
        let inst = with_priorities(raw, &prios);
        let report = balance_with_priorities(&inst).unwrap();
        prop_assert!(check_ratio_balance_admissible(&inst, &report.flow).unwrap().is_empty());
        prop_assert_eq!(report.priority_profile, Some(lex_optimal_profile(&inst).unwrap().profile));
    }

    #[test]
    fn single_priority_matches_plain_balancing((raw, _, prios) in raw_instance(5)) {
        prop_assume!(!raw.edges.is_empty());
        let plain = phase_decompose(&Instance::from_raw(&raw).unwrap()).unwrap();
        let inst = with_priorities(raw, &vec![1; prios.len()]);
        let report = balance_with_priorities(&inst).unwrap();
        prop_assert_eq!(report.risk_ratio, plain.risk_ratio);
    }

    #[test]
    fn saturating_first_class_starves_the_rest((raw, _, prios) in raw_instance(4)) {
        // Give every security a private first-class account that can absorb
        // its whole value.
        let s = raw.securities.len();
        let mut raw = raw;
        let mut prios = prios;
        let offset = raw.accounts.len();
        let values: Vec<i64> = raw.securities.iter().map(|x| x.value.text().parse().unwrap()).collect();
        for (i, v) in values.iter().enumerate() {
            let id = (offset + i + 1).to_string();
            raw.accounts.push(collateral_balance::model::RawAccount { id: id.as_str().into(), exposure: (*v).into() });
            raw.edges.push(collateral_balance::model::RawEdge {
                security: (i + 1).to_string().as_str().into(),
                account: id.as_str().into(),
                cap: None,
                priority: None,
            });
            prios.push(1);
        }
        let inst = with_priorities(raw, &prios);
        let report = balance_with_priorities(&inst).unwrap();
        let profile = report.priority_profile.unwrap();
        let total: i64 = values.iter().sum();
        prop_assert_eq!(&profile[0], &int(total));
        prop_assert!(profile[1..].iter().all(Zero::is_zero));
        prop_assert_eq!(s, inst.securities.len());
    }
}

#[test]
fn monotone_on_intro_breakpoints() {
    let inst = common::intro();
    let at = |l: Ratio| is_feasible(&inst, &l, Mode::Standard).unwrap().feasible;
    assert!(at(frac(2, 3)));
    assert!(!at(frac(2, 3) + frac(1, 1000)));
}
