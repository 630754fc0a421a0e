//! The phase algorithm for ratio-balanced maximum flows.
//!
//! Each phase finds the largest `lambda` for which every remaining account
//! can be secured to the fraction `lambda` of its exposure (the parametric
//! network `P_lambda` saturates all sink arcs). The securities and accounts
//! that the source cannot reach in the residual network at that critical
//! `lambda` are locked in with risk ratio `1 - lambda` and removed, and the
//! loop continues on the rest. `lambda` is located exactly by a bounded
//! fraction search whose queries are single max-flow computations.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::flow::{self, Capacity, FlowNetwork, MaxFlow, ResidualCut};
use crate::model::{BalanceReport, FlowAssignment, InfeasibleFlow, Instance, OverCoverage, PhaseRecord};
use crate::ratio::{self, Ratio};
use crate::search;

/// Query budget multiplier `c` in `c * ceil(log2(2 N^2))` per phase.
pub const QUERY_BUDGET_FACTOR: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `lambda` in `[0, 1]`: sink arcs carry at most the exposure.
    Standard,
    /// `lambda >= 1`: spreading leftover value over fully covered accounts.
    OverCoverage,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::OverCoverage => "over-coverage",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BalanceError {
    #[error("lambda {lambda} is out of range for {mode} mode")]
    LambdaOutOfRange { lambda: Ratio, mode: Mode },
    #[error("lambda search used {used} feasibility queries, budget is {budget}")]
    BudgetExceeded { used: usize, budget: usize },
    #[error("instance has no priorities on its edges")]
    MissingPriorities,
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Infeasible(#[from] InfeasibleFlow),
}

fn invariant(msg: impl Into<String>) -> BalanceError {
    BalanceError::Invariant(msg.into())
}

/// Bound on numerators and denominators of the fractions searched for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaQueryBudget {
    pub bound: BigInt,
    pub limit: usize,
    pub queries_used: usize,
}

impl LambdaQueryBudget {
    pub fn new(bound: BigInt) -> Self {
        let limit = search::query_budget(&bound, QUERY_BUDGET_FACTOR);
        Self { bound, limit, queries_used: 0 }
    }

    /// `nM` without caps; with caps the inflow of a tight set is still an
    /// integer but may come through capped arcs, so the bound is widened to
    /// the total value plus caps. Over-coverage searches `1 / lambda`, whose
    /// denominator is bounded by the total value.
    pub fn for_instance(inst: &Instance, mode: Mode) -> Self {
        let nm = BigInt::from(inst.node_count()) * inst.max_amount();
        let caps: Ratio = inst.edges.iter().filter_map(|e| e.cap.clone()).sum();
        let widened = || {
            let supply = ratio::from_big(&inst.total_value()) + &caps;
            supply.ceil().to_integer().max(inst.total_exposure())
        };
        let bound = match mode {
            Mode::Standard if !inst.has_caps() => nm,
            Mode::Standard => widened(),
            Mode::OverCoverage => nm.max(widened()),
        };
        Self::new(bound.max(BigInt::one()))
    }

    fn fresh(&self) -> Self {
        Self { queries_used: 0, ..self.clone() }
    }

    fn charge(&mut self) -> Result<(), BalanceError> {
        self.queries_used += 1;
        if self.queries_used > self.limit {
            return Err(BalanceError::BudgetExceeded { used: self.queries_used, budget: self.limit });
        }
        Ok(())
    }
}

/// `P_lambda` together with the arc of every node and edge.
#[derive(Debug, Clone)]
pub struct PLambda {
    pub network: FlowNetwork,
    pub source_arc: Vec<Option<usize>>,
    pub edge_arc: Vec<Option<usize>>,
    pub sink_arc: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct Feasibility {
    pub lambda: Ratio,
    pub feasible: bool,
    pub p_lambda: PLambda,
    pub flow: MaxFlow,
    pub cut: ResidualCut,
}

impl Feasibility {
    pub fn edge_flow(&self, edge: usize) -> Ratio {
        self.p_lambda.edge_arc[edge].map_or_else(ratio::zero, |a| self.flow.flow[a].clone())
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub lambda: Ratio,
    pub at_lambda: Feasibility,
    pub queries: usize,
}

/// What is left of an instance while phases are peeled off: the securities
/// still in play with the value they have left, and the accounts not yet
/// locked in.
#[derive(Debug, Clone)]
pub struct Subproblem<'a> {
    inst: &'a Instance,
    available: Vec<Option<Ratio>>,
    active: Vec<bool>,
}

impl<'a> Subproblem<'a> {
    pub fn full(inst: &'a Instance) -> Self {
        Self {
            inst,
            available: (0..inst.securities.len()).map(|i| Some(inst.value(i))).collect(),
            active: vec![true; inst.accounts.len()],
        }
    }

    /// Restriction to the given securities (with the value each may still
    /// give) and accounts.
    pub fn restricted(
        inst: &'a Instance,
        securities: impl IntoIterator<Item = (usize, Ratio)>,
        accounts: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut available = vec![None; inst.securities.len()];
        for (i, v) in securities {
            available[i] = Some(v);
        }
        let mut active = vec![false; inst.accounts.len()];
        for j in accounts {
            active[j] = true;
        }
        Self { inst, available, active }
    }

    pub fn remove(&mut self, securities: &BTreeSet<usize>, accounts: &BTreeSet<usize>) {
        for &i in securities {
            self.available[i] = None;
        }
        for &j in accounts {
            self.active[j] = false;
        }
    }

    pub fn active_securities(&self) -> impl Iterator<Item = usize> + '_ {
        self.available.iter().enumerate().filter(|(_, v)| v.is_some()).map(|(i, _)| i)
    }

    pub fn active_accounts(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j)
    }

    fn edge_active(&self, edge: usize) -> bool {
        let e = &self.inst.edges[edge];
        self.available[e.security].is_some() && self.active[e.account]
    }

    fn active_exposure(&self) -> Ratio {
        self.active_accounts().map(|j| self.inst.exposure(j)).sum()
    }

    pub fn p_lambda(&self, lambda: &Ratio, mode: Mode) -> Result<PLambda, BalanceError> {
        let in_range = match mode {
            Mode::Standard => !lambda.is_negative() && *lambda <= ratio::one(),
            Mode::OverCoverage => *lambda >= ratio::one(),
        };
        if !in_range {
            return Err(BalanceError::LambdaOutOfRange { lambda: lambda.clone(), mode });
        }
        let inst = self.inst;
        let mut net = FlowNetwork::bipartite(inst.securities.len(), inst.accounts.len());
        let source_arc = self
            .available
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_ref().map(|v| {
                    let node = net.security_node(i);
                    net.add_arc(net.source, node, v.clone())
                })
            })
            .collect();
        let edge_arc = (0..inst.edges.len())
            .map(|k| {
                self.edge_active(k).then(|| {
                    let e = &inst.edges[k];
                    let (from, to) = (net.security_node(e.security), net.account_node(e.account));
                    net.add_arc(from, to, Capacity::from(e.cap.clone()))
                })
            })
            .collect();
        let sink_arc = (0..inst.accounts.len())
            .map(|j| {
                self.active[j].then(|| {
                    let node = net.account_node(j);
                    net.add_arc(node, net.sink, lambda * inst.exposure(j))
                })
            })
            .collect();
        Ok(PLambda { network: net, source_arc, edge_arc, sink_arc })
    }

    /// Feasible means the maximum flow saturates every sink arc.
    pub fn is_feasible(&self, lambda: &Ratio, mode: Mode) -> Result<Feasibility, BalanceError> {
        let p_lambda = self.p_lambda(lambda, mode)?;
        let flow = flow::max_flow(&p_lambda.network);
        let feasible = flow.value == lambda * self.active_exposure();
        let cut = flow::residual_unreachable(&p_lambda.network, &flow.flow)
            .map_err(|e| invariant(format!("max-flow result rejected: {e}")))?;
        Ok(Feasibility { lambda: lambda.clone(), feasible, p_lambda, flow, cut })
    }

    /// Largest feasible `lambda`, located exactly.
    pub fn find_lambda(
        &self,
        mode: Mode,
        budget: &mut LambdaQueryBudget,
    ) -> Result<LambdaSearch, BalanceError> {
        if self.active_securities().next().is_none() || self.active_accounts().next().is_none() {
            return Err(invariant("lambda search needs a security and an account"));
        }
        let start = budget.queries_used;
        let (lambda, at_lambda) = locate_max_lambda(mode, budget, |lambda| {
            let at = self.is_feasible(lambda, mode)?;
            Ok((at.feasible, at))
        })?;
        Ok(LambdaSearch { lambda, at_lambda, queries: budget.queries_used - start })
    }
}

/// Locates the largest feasible `lambda` with one oracle call per query and
/// returns it with the oracle's answer there. After the search, `lambda` is
/// confirmed feasible and its bounded upper neighbour infeasible.
pub(crate) fn locate_max_lambda<T>(
    mode: Mode,
    budget: &mut LambdaQueryBudget,
    mut oracle: impl FnMut(&Ratio) -> Result<(bool, T), BalanceError>,
) -> Result<(Ratio, T), BalanceError> {
    let bound = budget.bound.clone();
    let mut ask = |lambda: &Ratio, budget: &mut LambdaQueryBudget| {
        budget.charge()?;
        oracle(lambda)
    };

    // Standard mode searches x = 1 - lambda in [0, 1]; over-coverage
    // searches x = 1 / lambda in (0, 1]. Either way feasibility is upward
    // closed in x.
    let to_lambda = |x: &Ratio| match mode {
        Mode::Standard => ratio::one() - x,
        Mode::OverCoverage => x.recip(),
    };
    let (lambda, next_above) = match mode {
        Mode::Standard if ask(&ratio::one(), budget)?.0 => (ratio::one(), None),
        Mode::Standard => {
            let located = search::search_min_fraction(&bound, (0, 1), (1, 1), |x| {
                ask(&to_lambda(x), budget).map(|f| f.0)
            })?;
            (to_lambda(&located.value), Some(to_lambda(&located.left_neighbour)))
        }
        Mode::OverCoverage => {
            if !ask(&ratio::one(), budget)?.0 {
                return Err(invariant("over-coverage requires the accounts to be fully covered"));
            }
            let located = search::search_min_fraction(&bound, (0, 1), (1, 1), |x| {
                ask(&to_lambda(x), budget).map(|f| f.0)
            })?;
            let left = located.left_neighbour;
            (to_lambda(&located.value), (!left.is_zero()).then(|| to_lambda(&left)))
        }
    };

    let (feasible, at_lambda) = ask(&lambda, budget)?;
    if !feasible {
        return Err(invariant(format!("located lambda {lambda} is not feasible")));
    }
    if let Some(above) = next_above {
        if ask(&above, budget)?.0 {
            return Err(invariant(format!("lambda {above} above the located {lambda} is feasible")));
        }
    }
    Ok((lambda, at_lambda))
}

pub fn build_p_lambda(inst: &Instance, lambda: &Ratio, mode: Mode) -> Result<FlowNetwork, BalanceError> {
    Subproblem::full(inst).p_lambda(lambda, mode).map(|p| p.network)
}

pub fn is_feasible(inst: &Instance, lambda: &Ratio, mode: Mode) -> Result<Feasibility, BalanceError> {
    Subproblem::full(inst).is_feasible(lambda, mode)
}

pub fn find_lambda(
    inst: &Instance,
    mode: Mode,
    budget: &mut LambdaQueryBudget,
) -> Result<LambdaSearch, BalanceError> {
    Subproblem::full(inst).find_lambda(mode, budget)
}

#[derive(Debug, Clone)]
struct PhaseOutcome {
    flow: Vec<Ratio>,
    phases: Vec<PhaseRecord>,
    queries: usize,
}

fn run_phases(mut sub: Subproblem<'_>, mode: Mode) -> Result<PhaseOutcome, BalanceError> {
    let inst = sub.inst;
    let budget = LambdaQueryBudget::for_instance(inst, mode);
    let check_closed_form = !inst.has_caps();
    let mut flow = vec![ratio::zero(); inst.edges.len()];
    let mut phases: Vec<PhaseRecord> = Vec::new();
    let mut queries = 0;

    while sub.active_accounts().next().is_some() {
        if sub.active_securities().next().is_none() {
            // Only possible before the first phase: nothing can secure anything.
            if mode != Mode::Standard || !phases.is_empty() {
                return Err(invariant("accounts left without securities"));
            }
            phases.push(PhaseRecord {
                index: 1,
                lambda: ratio::zero(),
                tight_securities: Vec::new(),
                tight_accounts: sub.active_accounts().collect(),
            });
            break;
        }

        let mut phase_budget = budget.fresh();
        let found = sub.find_lambda(mode, &mut phase_budget)?;
        queries += found.queries;
        let lambda = found.lambda;
        let at = &found.at_lambda;

        let takes_all = mode == Mode::Standard && lambda == ratio::one();
        let (tight_sec, tight_acc): (BTreeSet<usize>, BTreeSet<usize>) = if takes_all {
            (sub.active_securities().collect(), sub.active_accounts().collect())
        } else {
            (
                at.cut.unreachable_securities.iter().copied().filter(|&i| sub.available[i].is_some()).collect(),
                at.cut.unreachable_accounts.iter().copied().filter(|&j| sub.active[j]).collect(),
            )
        };
        if tight_acc.is_empty() {
            return Err(invariant(format!("no tight account at lambda {lambda}")));
        }
        if let Some(prev) = phases.last() {
            if lambda <= prev.lambda {
                return Err(invariant(format!("lambda {lambda} does not exceed {}", prev.lambda)));
            }
        }

        if check_closed_form {
            let supply: Ratio = tight_sec.iter().map(|&i| sub.available[i].clone().unwrap()).sum();
            let demand: Ratio = tight_acc.iter().map(|&j| inst.exposure(j)).sum();
            let ratio = supply / demand;
            let consistent = if takes_all { ratio >= lambda } else { ratio == lambda };
            if !consistent {
                return Err(invariant(format!(
                    "tight sets give secured fraction {ratio}, search gave {lambda}"
                )));
            }
        }

        for (k, e) in inst.edges.iter().enumerate() {
            if !sub.edge_active(k) {
                continue;
            }
            let f = at.edge_flow(k);
            if tight_acc.contains(&e.account) {
                if !tight_sec.contains(&e.security) && f.is_positive() {
                    // A capped arc saturated into the tight set.
                    let left = sub.available[e.security].as_mut().unwrap();
                    *left -= &f;
                }
                flow[k] = f;
            } else if tight_sec.contains(&e.security) && f.is_positive() {
                return Err(invariant("tight security sends flow past its phase"));
            }
        }

        phases.push(PhaseRecord {
            index: phases.len() + 1,
            lambda,
            tight_securities: tight_sec.iter().copied().collect(),
            tight_accounts: tight_acc.iter().copied().collect(),
        });
        sub.remove(&tight_sec, &tight_acc);
    }

    Ok(PhaseOutcome { flow, phases, queries })
}

/// Computes the ratio-balanced maximum flow. Edge priorities, if any, are
/// ignored here.
pub fn phase_decompose(inst: &Instance) -> Result<BalanceReport, BalanceError> {
    let outcome = run_phases(Subproblem::full(inst), Mode::Standard)?;
    let report = BalanceReport::from_flow(
        inst,
        FlowAssignment::from_values(outcome.flow),
        outcome.phases,
        outcome.queries,
    )?;
    Ok(report)
}

/// Spreads the value left over after balancing across the fully covered
/// accounts, again in ratio-balanced fashion but with `lambda >= 1`.
///
/// The securities considered are all those adjacent to a fully covered
/// account, each with the value it does not already pledge to an account
/// that is not fully covered.
pub fn over_coverage_pass(inst: &Instance, report: &BalanceReport) -> Result<BalanceReport, BalanceError> {
    let fully: BTreeSet<usize> =
        report.risk_ratio.iter().enumerate().filter(|(_, r)| r.is_zero()).map(|(j, _)| j).collect();
    if fully.is_empty() {
        return Ok(report.clone());
    }
    let mut pledged_elsewhere = vec![ratio::zero(); inst.securities.len()];
    let mut adjacent = BTreeSet::new();
    for (e, f) in inst.edges.iter().zip(&report.flow.values) {
        if fully.contains(&e.account) {
            adjacent.insert(e.security);
        } else {
            pledged_elsewhere[e.security] += f;
        }
    }
    let securities: Vec<(usize, Ratio)> = adjacent
        .into_iter()
        .map(|i| (i, inst.value(i) - &pledged_elsewhere[i]))
        .filter(|(_, v)| v.is_positive())
        .collect();
    let included: BTreeSet<usize> = securities.iter().map(|(i, _)| *i).collect();

    // Over-coverage bounds assume integral leftovers; scale them up if a
    // fractional pledge left a fraction behind.
    let den = securities.iter().fold(BigInt::one(), |acc, (_, v)| acc.lcm(v.denom()));
    if !den.is_one() {
        return Err(invariant("fractional leftover security value"));
    }

    let sub = Subproblem::restricted(inst, securities, fully.iter().copied());
    let outcome = run_phases(sub, Mode::OverCoverage)?;
    let mut values = report.flow.values.clone();
    for (k, e) in inst.edges.iter().enumerate() {
        if fully.contains(&e.account) && included.contains(&e.security) {
            values[k] = outcome.flow[k].clone();
        }
    }
    let mut out = report.clone();
    out.queries += outcome.queries;
    out.over_coverage = Some(OverCoverage {
        flow: FlowAssignment { values, over_coverage: true },
        phases: outcome.phases,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::risk_vector;
    use crate::ratio::{frac, int};

    fn intro() -> Instance {
        Instance::from_integers(&[3, 3, 5], &[4, 6, 6], &[(1, 1), (2, 1), (2, 2), (3, 2), (3, 3)])
    }

    fn even_split() -> Instance {
        Instance::from_integers(&[8, 8], &[12, 8, 16], &[(1, 1), (1, 2), (2, 1), (2, 2), (2, 3)])
    }

    fn over_coverage_example() -> Instance {
        Instance::from_integers(&[1, 2, 3], &[1, 1], &[(1, 1), (1, 2), (2, 2), (3, 2)])
    }

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn p_lambda_construction() {
        let net = build_p_lambda(&intro(), &frac(2, 3), Mode::Standard).unwrap();
        let sinks: Vec<Ratio> = net
            .arcs
            .iter()
            .filter(|a| a.to == net.sink)
            .map(|a| a.capacity.finite().unwrap().clone())
            .collect();
        assert_eq!(sinks, vec![frac(8, 3), int(4), int(4)]);
        assert_eq!(net.arcs.iter().filter(|a| a.capacity == Capacity::Infinite).count(), 5);

        let mut capped = intro();
        capped.edges[1].cap = Some(int(2));
        let net = build_p_lambda(&capped, &int(1), Mode::Standard).unwrap();
        let middle: Vec<_> =
            net.arcs.iter().filter(|a| a.from != net.source && a.to != net.sink).collect();
        assert_eq!(middle[1].capacity, Capacity::Finite(int(2)));

        assert!(matches!(
            build_p_lambda(&intro(), &frac(3, 2), Mode::Standard),
            Err(BalanceError::LambdaOutOfRange { .. })
        ));
        assert!(matches!(
            build_p_lambda(&intro(), &frac(1, 2), Mode::OverCoverage),
            Err(BalanceError::LambdaOutOfRange { .. })
        ));
    }

    #[test]
    fn over_coverage_sub_network_sink_cap() {
        let inst = over_coverage_example();
        let sub = Subproblem::restricted(&inst, [(1, int(2)), (2, int(3))], [1]);
        let p = sub.p_lambda(&int(5), Mode::OverCoverage).unwrap();
        let sink = p.sink_arc[1].unwrap();
        assert_eq!(p.network.arcs[sink].capacity, Capacity::Finite(int(5)));
        assert!(p.sink_arc[0].is_none());
        assert!(sub.is_feasible(&int(5), Mode::OverCoverage).unwrap().feasible);
        assert!(!sub.is_feasible(&frac(51, 10), Mode::OverCoverage).unwrap().feasible);
    }

    #[test]
    fn feasibility_thresholds() {
        let inst = intro();
        assert!(is_feasible(&inst, &frac(2, 3), Mode::Standard).unwrap().feasible);
        assert!(!is_feasible(&inst, &(frac(2, 3) + frac(1, 1000)), Mode::Standard).unwrap().feasible);
        assert!(is_feasible(&inst, &int(0), Mode::Standard).unwrap().feasible);
        let fig = even_split();
        assert!(is_feasible(&fig, &frac(4, 9), Mode::Standard).unwrap().feasible);
        assert!(!is_feasible(&fig, &frac(1, 2), Mode::Standard).unwrap().feasible);
    }

    #[test]
    fn even_split_cut_at_critical_lambda_is_everything() {
        let fig = even_split();
        let at = is_feasible(&fig, &frac(4, 9), Mode::Standard).unwrap();
        assert_eq!(at.cut.unreachable_securities, set(&[0, 1]));
        assert_eq!(at.cut.unreachable_accounts, set(&[0, 1, 2]));
    }

    #[test]
    fn find_lambda_on_intro_phases() {
        let inst = intro();
        let mut budget = LambdaQueryBudget::for_instance(&inst, Mode::Standard);
        assert_eq!(budget.bound, BigInt::from(36));
        let first = find_lambda(&inst, Mode::Standard, &mut budget).unwrap();
        assert_eq!(first.lambda, frac(2, 3));
        assert!(first.queries <= budget.limit);
        assert_eq!(first.at_lambda.cut.unreachable_accounts, set(&[1, 2]));

        let mut sub = Subproblem::full(&inst);
        sub.remove(&set(&[1, 2]), &set(&[1, 2]));
        let mut budget = LambdaQueryBudget::for_instance(&inst, Mode::Standard);
        assert_eq!(sub.find_lambda(Mode::Standard, &mut budget).unwrap().lambda, frac(3, 4));
    }

    #[test]
    fn exact_cover_gives_lambda_one() {
        let inst = Instance::from_integers(&[5], &[5], &[(1, 1)]);
        let mut budget = LambdaQueryBudget::for_instance(&inst, Mode::Standard);
        assert_eq!(find_lambda(&inst, Mode::Standard, &mut budget).unwrap().lambda, int(1));
    }

    #[test]
    fn tiny_budget_is_reported() {
        let inst = intro();
        let mut budget = LambdaQueryBudget { bound: BigInt::from(36), limit: 2, queries_used: 0 };
        assert!(matches!(
            find_lambda(&inst, Mode::Standard, &mut budget),
            Err(BalanceError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn intro_phase_decomposition() {
        let inst = intro();
        let report = phase_decompose(&inst).unwrap();
        assert_eq!(report.lambdas(), vec![frac(2, 3), frac(3, 4)]);
        assert_eq!(report.phases[0].tight_securities, vec![1, 2]);
        assert_eq!(report.phases[0].tight_accounts, vec![1, 2]);
        assert_eq!(report.phases[1].tight_securities, vec![0]);
        assert_eq!(report.phases[1].tight_accounts, vec![0]);
        assert_eq!(report.flow.values, vec![int(3), int(0), int(3), int(1), int(4)]);
        assert_eq!(report.risk_ratio, vec![frac(1, 4), frac(1, 3), frac(1, 3)]);
        assert_eq!(report.objective, frac(19, 12));
    }

    #[test]
    fn even_split_single_phase() {
        let inst = even_split();
        let report = phase_decompose(&inst).unwrap();
        assert_eq!(report.lambdas(), vec![frac(4, 9)]);
        assert_eq!(report.risk_ratio, vec![frac(5, 9); 3]);
        assert_eq!(report.objective, frac(100, 9));
    }

    #[test]
    fn isolated_account_is_locked_at_zero() {
        let inst = Instance::from_integers(&[3], &[4, 2], &[(1, 1)]);
        let report = phase_decompose(&inst).unwrap();
        assert_eq!(report.phases[0].lambda, int(0));
        assert_eq!(report.phases[0].tight_accounts, vec![1]);
        assert_eq!(report.risk_ratio[1], int(1));
        assert_eq!(report.risk_ratio[0], frac(1, 4));
    }

    #[test]
    fn no_securities_at_all() {
        let inst = Instance::from_integers(&[7], &[5], &[]);
        let report = phase_decompose(&inst).unwrap();
        assert_eq!(report.phases.len(), 1);
        assert_eq!(report.phases[0].lambda, int(0));
        assert_eq!(report.risk_ratio, vec![int(1)]);
        assert_eq!(report.queries, 0);
    }

    #[test]
    fn capped_edges_are_respected() {
        // Without the cap security 1 would split evenly.
        let mut inst = Instance::from_integers(&[10], &[10, 10], &[(1, 1), (1, 2)]);
        inst.edges[0].cap = Some(int(2));
        let report = phase_decompose(&inst).unwrap();
        assert_eq!(report.flow.values, vec![int(2), int(8)]);
        assert_eq!(report.risk_ratio, vec![frac(4, 5), frac(1, 5)]);
        report.flow.check(&inst).unwrap();
    }

    #[test]
    fn capped_arc_from_later_security_into_tight_set() {
        // Account 1 is reachable only through a capped edge from security 2,
        // which also serves account 2.
        let mut inst = Instance::from_integers(&[1, 10], &[10, 5], &[(1, 1), (2, 1), (2, 2)]);
        inst.edges[1].cap = Some(int(1));
        let report = phase_decompose(&inst).unwrap();
        assert_eq!(report.risk_ratio, vec![frac(4, 5), int(0)]);
        assert_eq!(report.flow.values, vec![int(1), int(1), int(5)]);
        let r = risk_vector(&inst, &report.flow).unwrap();
        assert_eq!(r, report.risk_ratio);
    }

    #[test]
    fn over_coverage_example_phases() {
        let inst = over_coverage_example();
        let base = phase_decompose(&inst).unwrap();
        assert_eq!(base.risk_ratio, vec![int(0), int(0)]);
        let report = over_coverage_pass(&inst, &base).unwrap();
        assert_eq!(report.flow, base.flow);
        let oc = report.over_coverage.unwrap();
        let lambdas: Vec<Ratio> = oc.phases.iter().map(|p| p.lambda.clone()).collect();
        assert_eq!(lambdas, vec![int(1), int(5)]);
        assert_eq!(oc.phases[0].tight_securities, vec![0]);
        assert_eq!(oc.phases[0].tight_accounts, vec![0]);
        assert_eq!(oc.phases[1].tight_securities, vec![1, 2]);
        assert_eq!(oc.phases[1].tight_accounts, vec![1]);
        assert_eq!(oc.flow.values, vec![int(1), int(0), int(2), int(3)]);
        assert!(oc.flow.over_coverage);
        oc.flow.check(&inst).unwrap();
    }

    #[test]
    fn over_coverage_without_full_cover_is_a_no_op() {
        let inst = intro();
        let base = phase_decompose(&inst).unwrap();
        assert_eq!(over_coverage_pass(&inst, &base).unwrap(), base);
    }

    #[test]
    fn over_coverage_single_pair() {
        let inst = Instance::from_integers(&[10], &[2], &[(1, 1)]);
        let base = phase_decompose(&inst).unwrap();
        let oc = over_coverage_pass(&inst, &base).unwrap().over_coverage.unwrap();
        assert_eq!(oc.phases.len(), 1);
        assert_eq!(oc.phases[0].lambda, int(5));
        assert_eq!(oc.flow.values, vec![int(10)]);
    }
}
