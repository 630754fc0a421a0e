#![allow(dead_code)]

use collateral_balance::model::{FlowAssignment, Instance, RawInstance};
use collateral_balance::ratio::{self, Ratio};
use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SIZE: usize = 500;
pub const CORPUS_SEED: u64 = 0x5eed_c011;

pub fn intro() -> Instance {
    Instance::from_integers(&[3, 3, 5], &[4, 6, 6], &[(1, 1), (2, 1), (2, 2), (3, 2), (3, 3)])
}

pub fn even_split() -> Instance {
    Instance::from_integers(&[8, 8], &[12, 8, 16], &[(1, 1), (1, 2), (2, 1), (2, 2), (2, 3)])
}

pub fn over_coverage_example() -> Instance {
    Instance::from_integers(&[1, 2, 3], &[1, 1], &[(1, 1), (1, 2), (2, 2), (3, 2)])
}

/// Edges x1: 1->1 (p1), x2: 1->2 (p1), x3: 2->2 (p2), x4: 2->3 (p1).
pub fn priority_raw(values: &[i64], exposures: &[i64]) -> RawInstance {
    let mut raw = RawInstance::from_integers(values, exposures, &[(1, 1), (1, 2), (2, 2), (2, 3)]);
    for (edge, p) in raw.edges.iter_mut().zip([1, 1, 2, 1]) {
        edge.priority = Some(p);
    }
    raw
}

pub fn priority_example() -> Instance {
    Instance::from_raw(&priority_raw(&[20, 20], &[20, 20, 5])).unwrap()
}

/// Random instances: |S|, |A| uniform in 1..=8, values and exposures uniform
/// in 1..=20, each possible edge present with probability 1/2.
pub fn random_raw(rng: &mut impl Rng) -> RawInstance {
    let s = rng.gen_range(1..=8);
    let a = rng.gen_range(1..=8);
    let values: Vec<i64> = (0..s).map(|_| rng.gen_range(1..=20)).collect();
    let exposures: Vec<i64> = (0..a).map(|_| rng.gen_range(1..=20)).collect();
    let mut edges = Vec::new();
    for i in 1..=s {
        for j in 1..=a {
            if rng.gen_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    RawInstance::from_integers(&values, &exposures, &edges)
}

pub fn corpus() -> Vec<(RawInstance, Instance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    (0..CORPUS_SIZE)
        .map(|_| {
            let raw = random_raw(&mut rng);
            let inst = Instance::from_raw(&raw).expect("generated instances are valid");
            (raw, inst)
        })
        .collect()
}

/// The same instance with securities, accounts and edges listed in a
/// different order.
pub fn permuted(raw: &RawInstance, seed: u64) -> RawInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = raw.clone();
    out.securities.shuffle(&mut rng);
    out.accounts.shuffle(&mut rng);
    out.edges.shuffle(&mut rng);
    if seed.is_multiple_of(2) {
        out.edges.reverse();
    }
    out
}

/// Risk ratios keyed by account id.
pub fn risk_by_id(inst: &Instance, risk: &[Ratio]) -> Vec<(String, Ratio)> {
    let mut out: Vec<(String, Ratio)> =
        inst.accounts.iter().map(|a| a.id.clone()).zip(risk.iter().cloned()).collect();
    out.sort();
    out
}

fn random_fraction(rng: &mut impl Rng) -> Ratio {
    let den = rng.gen_range(1..=12i64);
    Ratio::new(BigInt::from(rng.gen_range(0..=den)), BigInt::from(den))
}

/// A random feasible flow with rational values.
pub fn random_feasible_flow(inst: &Instance, rng: &mut impl Rng) -> FlowAssignment {
    let mut value: Vec<Ratio> = (0..inst.securities.len()).map(|i| inst.value(i)).collect();
    let mut room: Vec<Ratio> = (0..inst.accounts.len()).map(|j| inst.exposure(j)).collect();
    let mut order: Vec<usize> = (0..inst.edges.len()).collect();
    order.shuffle(rng);
    let mut values = vec![ratio::zero(); inst.edges.len()];
    for k in order {
        let e = &inst.edges[k];
        let mut most = ratio::min(&value[e.security], &room[e.account]);
        if let Some(c) = &e.cap {
            most = ratio::min(&most, c);
        }
        let x = most * random_fraction(rng);
        value[e.security] -= &x;
        room[e.account] -= &x;
        values[k] = x;
    }
    FlowAssignment::from_values(values)
}

/// A flow strictly inside every bound, so small perturbations of any edge
/// stay feasible.
pub fn interior_flow(inst: &Instance, rng: &mut impl Rng) -> FlowAssignment {
    let sec_deg = inst.edges.iter().fold(vec![0i64; inst.securities.len()], |mut d, e| {
        d[e.security] += 1;
        d
    });
    let acc_deg = inst.edges.iter().fold(vec![0i64; inst.accounts.len()], |mut d, e| {
        d[e.account] += 1;
        d
    });
    let values = inst
        .edges
        .iter()
        .map(|e| {
            let share = ratio::min(
                &(inst.value(e.security) / ratio::int(sec_deg[e.security])),
                &(inst.exposure(e.account) / ratio::int(acc_deg[e.account])),
            );
            let u = Ratio::new(BigInt::from(rng.gen_range(50..950)), BigInt::from(1000));
            share * u
        })
        .collect();
    FlowAssignment::from_values(values)
}
