//! Priority classes on edges.
//!
//! The flow must first be maximal on priority-1 edges, then, subject to that,
//! on priority-2 edges, and so on; only then is it ratio-balanced. The total
//! flow value is not maximized separately: one more unit on a lower class
//! never outweighs one less on a higher class. The lexicographic part is one
//! min-cost flow with weights `-B^(P - p)`, `B = 1 + sum e`. Its optimal
//! potentials describe every lexicographically optimal flow at once: arcs
//! with positive reduced cost carry nothing, arcs with negative reduced cost
//! are saturated, and the rest are free. The phase algorithm then runs over
//! circulations within those bounds.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed};

use crate::balancer::{self, BalanceError, LambdaQueryBudget, Mode};
use crate::flow::{self, BoundedArc, Capacity, FlowNetwork};
use crate::model::{self, BalanceReport, FlowAssignment, Instance, PhaseRecord};
use crate::ratio::{self, Ratio};

/// Base of the lexicographic weights; exceeds any achievable flow value.
pub fn weight_base(inst: &Instance) -> BigInt {
    inst.total_exposure() + 1u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexProfile {
    /// Flow per priority class, class 1 first.
    pub profile: Vec<Ratio>,
    /// Node potentials of the min-cost flow, indexed like the nodes of
    /// [`priority_network`].
    pub potentials: Vec<BigInt>,
    pub flow: FlowAssignment,
}

/// Source arcs per security, then one arc per edge, then sink arcs per
/// account, in that order.
pub fn priority_network(inst: &Instance) -> Result<FlowNetwork, BalanceError> {
    if !inst.has_priorities() {
        return Err(BalanceError::MissingPriorities);
    }
    let base = weight_base(inst);
    let classes = inst.num_priorities();
    let mut net = FlowNetwork::bipartite(inst.securities.len(), inst.accounts.len());
    for i in 0..inst.securities.len() {
        let node = net.security_node(i);
        net.add_arc(net.source, node, inst.value(i));
    }
    for e in &inst.edges {
        let p = e.priority.expect("validated: all edges carry priorities");
        let cost = -num_traits::pow(base.clone(), (classes - p) as usize);
        let (from, to) = (net.security_node(e.security), net.account_node(e.account));
        net.add_arc_with_cost(from, to, Capacity::from(e.cap.clone()), cost);
    }
    for j in 0..inst.accounts.len() {
        let node = net.account_node(j);
        net.add_arc(node, net.sink, inst.exposure(j));
    }
    Ok(net)
}

pub fn lex_optimal_profile(inst: &Instance) -> Result<LexProfile, BalanceError> {
    let net = priority_network(inst)?;
    let mcf = flow::min_cost_flow(&net);
    let offset = inst.securities.len();
    let flow = FlowAssignment::from_values(mcf.flow[offset..offset + inst.edges.len()].to_vec());
    flow.check(inst)?;
    let profile = model::priority_totals(inst, &flow);
    Ok(LexProfile { profile, potentials: mcf.potentials, flow })
}

/// Bounds every arc of the network, plus the zero-cost closing arc `t -> s`,
/// according to its reduced cost. Any circulation within these bounds is a
/// lexicographically optimal flow.
fn admissible_bounds(net: &FlowNetwork, potentials: &[BigInt]) -> Result<Vec<BoundedArc>, BalanceError> {
    let mut arcs = Vec::with_capacity(net.arcs.len() + 1);
    let closing = flow::Arc {
        from: net.sink,
        to: net.source,
        capacity: Capacity::Infinite,
        cost: BigInt::from(0),
    };
    for arc in net.arcs.iter().chain(std::iter::once(&closing)) {
        let rc = flow::reduced_cost(arc, potentials);
        let (lower, upper) = if rc.is_positive() {
            (ratio::zero(), Capacity::Finite(ratio::zero()))
        } else if rc.is_negative() {
            match &arc.capacity {
                Capacity::Finite(u) => (u.clone(), Capacity::Finite(u.clone())),
                Capacity::Infinite => {
                    return Err(BalanceError::Invariant("unbounded arc with negative reduced cost".into()))
                }
            }
        } else {
            (ratio::zero(), arc.capacity.clone())
        };
        arcs.push(BoundedArc { from: arc.from, to: arc.to, lower, upper });
    }
    Ok(arcs)
}

/// Ratio-balanced flow among the lexicographically optimal flows.
pub fn balance_with_priorities(inst: &Instance) -> Result<BalanceReport, BalanceError> {
    let lex = lex_optimal_profile(inst)?;
    let net = priority_network(inst)?;
    let mut arcs = admissible_bounds(&net, &lex.potentials)?;
    let n = net.node_count();
    let (sec_count, edge_count) = (inst.securities.len(), inst.edges.len());
    let edge_arc = |k: usize| sec_count + k;
    let sink_arc = |j: usize| sec_count + edge_count + j;

    let mut active_acc: BTreeSet<usize> = (0..inst.accounts.len()).collect();
    let mut active_sec: BTreeSet<usize> = (0..sec_count).collect();
    let mut phases: Vec<PhaseRecord> = Vec::new();
    let mut queries = 0;
    let mut current: Option<Vec<Ratio>> = None;

    let base_bound = {
        let nm = BigInt::from(inst.node_count()) * inst.max_amount();
        let caps: Ratio = inst.edges.iter().filter_map(|e| e.cap.clone()).sum();
        let supply = (ratio::from_big(&inst.total_value()) + caps).ceil().to_integer();
        nm.max(supply).max(inst.total_exposure()).max(BigInt::one())
    };

    while !active_acc.is_empty() {
        // Arcs fixed in earlier phases may carry fractions; widen the bound
        // by their common denominator.
        let den = arcs.iter().fold(BigInt::one(), |acc, a| {
            let acc = acc.lcm(a.lower.denom());
            match &a.upper {
                Capacity::Finite(u) => acc.lcm(u.denom()),
                Capacity::Infinite => acc,
            }
        });
        let mut budget = LambdaQueryBudget::new(&base_bound * den);
        let with_lambda = |lambda: &Ratio| {
            let mut bounded = arcs.clone();
            for &j in &active_acc {
                let arc = &mut bounded[sink_arc(j)];
                let wanted = lambda * inst.exposure(j);
                if wanted > arc.lower {
                    arc.lower = wanted;
                }
            }
            bounded
        };
        let (lambda, (bounded, circulation)) =
            balancer::locate_max_lambda(Mode::Standard, &mut budget, |lambda| {
                let bounded = with_lambda(lambda);
                let found = flow::feasible_circulation(n, &bounded);
                Ok((found.is_some(), (bounded, found)))
            })?;
        queries += budget.queries_used;
        let circulation = circulation.expect("confirmed feasible");

        let takes_all = lambda == ratio::one();
        let reach = flow::bounded_residual_reachable(n, &bounded, &circulation, net.sink);
        let tight_acc: BTreeSet<usize> = active_acc
            .iter()
            .copied()
            .filter(|&j| {
                let a = sink_arc(j);
                let stuck = circulation[a] == bounded[a].lower
                    && bounded[a].upper.finite() == Some(&circulation[a]);
                takes_all || stuck || !reach[net.account_node(j)]
            })
            .collect();
        let tight_sec: BTreeSet<usize> = active_sec
            .iter()
            .copied()
            .filter(|&i| takes_all || !reach[net.security_node(i)])
            .collect();
        if tight_acc.is_empty() {
            return Err(BalanceError::Invariant(format!("no tight account at lambda {lambda}")));
        }
        if let Some(prev) = phases.last() {
            if lambda <= prev.lambda {
                return Err(BalanceError::Invariant(format!(
                    "lambda {lambda} does not exceed {}",
                    prev.lambda
                )));
            }
        }

        let mut fix = |a: usize| {
            let value = circulation[a].clone();
            arcs[a].lower = value.clone();
            arcs[a].upper = Capacity::Finite(value);
        };
        for (k, e) in inst.edges.iter().enumerate() {
            if tight_acc.contains(&e.account) {
                fix(edge_arc(k));
            }
        }
        for &j in &tight_acc {
            fix(sink_arc(j));
        }

        phases.push(PhaseRecord {
            index: phases.len() + 1,
            lambda,
            tight_securities: tight_sec.iter().copied().collect(),
            tight_accounts: tight_acc.iter().copied().collect(),
        });
        active_acc.retain(|j| !tight_acc.contains(j));
        active_sec.retain(|i| !tight_sec.contains(i));
        current = Some(circulation);
    }

    let flow = match current {
        Some(c) => FlowAssignment::from_values((0..edge_count).map(|k| c[edge_arc(k)].clone()).collect()),
        None => lex.flow.clone(),
    };
    let mut report = BalanceReport::from_flow(inst, flow, phases, queries)?;
    let profile = model::priority_totals(inst, &report.flow);
    if profile != lex.profile {
        return Err(BalanceError::Invariant("balancing changed the priority profile".into()));
    }
    report.priority_profile = Some(profile);
    Ok(report)
}

/// `-sum_p eps^p F_p + eps^(P+1) sum_j e_j r_j^2`, the single-objective
/// form of priorities followed by balancing. Only meaningful for checking.
pub fn eval_priority_objective(
    inst: &Instance,
    f: &FlowAssignment,
    eps: &Ratio,
) -> Result<Ratio, BalanceError> {
    let totals = model::priority_totals(inst, f);
    let mut power = ratio::one();
    let mut value = ratio::zero();
    for total in &totals {
        power *= eps;
        value -= &power * total;
    }
    power *= eps;
    Ok(value + power * model::mwsr_objective(inst, f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RawInstance;
    use crate::ratio::{frac, int};

    /// Edges x1: 1->1 (p1), x2: 1->2 (p1), x3: 2->2 (p2), x4: 2->3 (p1).
    fn example(values: &[i64], exposures: &[i64]) -> Instance {
        let mut raw = RawInstance::from_integers(values, exposures, &[(1, 1), (1, 2), (2, 2), (2, 3)]);
        for (edge, p) in raw.edges.iter_mut().zip([1, 1, 2, 1]) {
            edge.priority = Some(p);
        }
        Instance::from_raw(&raw).unwrap()
    }

    fn with_priorities(inst: &Instance, p: &[u32]) -> Instance {
        let mut inst = inst.clone();
        for (e, &p) in inst.edges.iter_mut().zip(p) {
            e.priority = Some(p);
        }
        inst
    }

    #[test]
    fn profile_of_example() {
        let inst = example(&[20, 20], &[20, 20, 5]);
        assert_eq!(weight_base(&inst), BigInt::from(46));
        let lex = lex_optimal_profile(&inst).unwrap();
        assert_eq!(lex.profile, vec![int(25), int(15)]);
    }

    #[test]
    fn balanced_example() {
        let inst = example(&[20, 20], &[20, 20, 5]);
        let report = balance_with_priorities(&inst).unwrap();
        assert_eq!(report.flow.values, vec![frac(35, 2), frac(5, 2), int(15), int(5)]);
        assert_eq!(report.priority_profile, Some(vec![int(25), int(15)]));
        assert_eq!(report.risk_ratio, vec![frac(1, 8), frac(1, 8), int(0)]);
    }

    #[test]
    fn missing_priorities() {
        let inst = Instance::from_integers(&[1], &[1], &[(1, 1)]);
        assert_eq!(lex_optimal_profile(&inst), Err(BalanceError::MissingPriorities));
        assert!(matches!(balance_with_priorities(&inst), Err(BalanceError::MissingPriorities)));
    }

    #[test]
    fn single_class_matches_plain_balancing() {
        let intro = Instance::from_integers(&[3, 3, 5], &[4, 6, 6], &[(1, 1), (2, 1), (2, 2), (3, 2), (3, 3)]);
        let inst = with_priorities(&intro, &[1; 5]);
        let lex = lex_optimal_profile(&inst).unwrap();
        assert_eq!(lex.profile, vec![int(11)]);
        let report = balance_with_priorities(&inst).unwrap();
        assert_eq!(report.risk_ratio, balancer::phase_decompose(&intro).unwrap().risk_ratio);
    }

    #[test]
    fn first_class_beats_total_value() {
        // Routing 1->2 and 2->1 would secure two units, but only on class 2;
        // the class-1 edge 1->1 takes precedence and blocks both.
        let plain = Instance::from_integers(&[1, 1], &[1, 1], &[(1, 1), (1, 2), (2, 1)]);
        let inst = with_priorities(&plain, &[1, 2, 2]);
        let lex = lex_optimal_profile(&inst).unwrap();
        assert_eq!(lex.profile, vec![int(1), int(0)]);
        let report = balance_with_priorities(&inst).unwrap();
        assert_eq!(report.flow.values, vec![int(1), int(0), int(0)]);
        assert_eq!(report.risk_ratio, vec![int(0), int(1)]);
    }

    #[test]
    fn unreachable_second_class_carries_nothing() {
        // Priority-1 edges saturate the only account; the class-2 edge gets 0.
        let plain = Instance::from_integers(&[5, 5], &[5], &[(1, 1), (2, 1)]);
        let inst = with_priorities(&plain, &[1, 2]);
        let lex = lex_optimal_profile(&inst).unwrap();
        assert_eq!(lex.profile, vec![int(5), int(0)]);
        let report = balance_with_priorities(&inst).unwrap();
        assert_eq!(report.flow.values, vec![int(5), int(0)]);
    }

    #[test]
    fn objective_of_example() {
        let inst = example(&[20, 20], &[20, 20, 5]);
        let x = FlowAssignment::from_values(vec![frac(35, 2), frac(5, 2), int(15), int(5)]);
        let eps = frac(1, 100);
        let expected = frac(-25, 100) - frac(15, 10_000) + frac(1, 1_000_000) * frac(5, 8);
        assert_eq!(eval_priority_objective(&inst, &x, &eps).unwrap(), expected);
        let zero = FlowAssignment::zero(&inst);
        assert_eq!(eval_priority_objective(&inst, &zero, &eps).unwrap(), frac(45, 1_000_000));
    }

    #[test]
    fn class_two_shuffle_leaves_class_one_term() {
        let inst = example(&[20, 20], &[20, 20, 5]);
        let eps = frac(1, 10);
        let a = FlowAssignment::from_values(vec![int(10), int(0), int(5), int(0)]);
        let b = FlowAssignment::from_values(vec![int(10), int(0), int(3), int(0)]);
        let diff = eval_priority_objective(&inst, &a, &eps).unwrap()
            - eval_priority_objective(&inst, &b, &eps).unwrap();
        // Only the class-2 term and the balancing term differ.
        let balance = frac(1, 1000) * (model::mwsr_objective(&inst, &a).unwrap() - model::mwsr_objective(&inst, &b).unwrap());
        assert_eq!(diff, frac(-2, 100) + balance);
    }
}
