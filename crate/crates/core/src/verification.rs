//! Independent checks of balancing output: the balance condition, flow
//! maximality, a brute-force risk-vector oracle, the quadratic-program form
//! of the objective, and numeric probes of optimality.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::flow::{self, Capacity, FlowNetwork};
use crate::model::{self, FlowAssignment, InfeasibleFlow, Instance};
use crate::ratio::{self, Ratio};

/// Default account limit for [`oracle_risk_vector`].
pub const ORACLE_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("subset oracle limited to {limit} accounts, instance has {accounts}")]
    TooLarge { accounts: usize, limit: usize },
    #[error("subset oracle does not handle priorities")]
    Priorities,
}

/// Security `security` sends flow to `account` although its edge to
/// `sibling` leads to a strictly worse covered account.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub security: usize,
    pub account: usize,
    pub sibling: usize,
    /// `r_sibling - r_account`, positive.
    pub gap: Ratio,
}

/// Slack allowed when checking rounded flows; zero means exact.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tolerance {
    /// For flow amounts, in instance units.
    pub amount: Ratio,
    /// For risk-ratio differences.
    pub ratio: Ratio,
}

impl Tolerance {
    pub fn exact() -> Self {
        Self::default()
    }
}

fn risk_unchecked(inst: &Instance, f: &FlowAssignment) -> Vec<Ratio> {
    f.inflow(inst).iter().enumerate().map(|(j, x)| (inst.exposure(j) - x) / inst.exposure(j)).collect()
}

fn ratio_balance_violations(
    inst: &Instance,
    f: &FlowAssignment,
    tol: &Tolerance,
    movable: impl Fn(usize, usize) -> bool,
) -> Vec<Violation> {
    let risk = risk_unchecked(inst, f);
    let by_security = inst.edges_by_security();
    let mut out = Vec::new();
    for (k, e) in inst.edges.iter().enumerate() {
        if f.values[k] <= tol.amount {
            continue;
        }
        for &l in &by_security[e.security] {
            let sibling = &inst.edges[l];
            if l == k || !movable(k, l) {
                continue;
            }
            // A sibling edge already at its claim limit cannot take more.
            if let Some(cap) = &sibling.cap {
                if f.values[l] >= cap - &tol.amount {
                    continue;
                }
            }
            let gap = &risk[sibling.account] - &risk[e.account];
            if gap > tol.ratio {
                out.push(Violation { security: e.security, account: e.account, sibling: sibling.account, gap });
            }
        }
    }
    out
}

/// Every pair (positive edge `ij`, sibling edge `il`) with `r_j < r_l`.
pub fn check_ratio_balance(inst: &Instance, f: &FlowAssignment) -> Result<Vec<Violation>, InfeasibleFlow> {
    f.check(inst)?;
    Ok(ratio_balance_violations(inst, f, &Tolerance::exact(), |_, _| true))
}

/// The balance condition restricted to moves that stay inside the set of
/// lexicographically optimal flows of a prioritized instance: flow may only
/// shift from `ij` to `il` if both edges and both sink arcs are free there.
pub fn check_ratio_balance_admissible(
    inst: &Instance,
    f: &FlowAssignment,
) -> Result<Vec<Violation>, crate::balancer::BalanceError> {
    f.check(inst)?;
    let lex = crate::priority::lex_optimal_profile(inst)?;
    let net = crate::priority::priority_network(inst)?;
    let free: Vec<bool> =
        net.arcs.iter().map(|a| flow::reduced_cost(a, &lex.potentials).is_zero()).collect();
    let (s, m) = (inst.securities.len(), inst.edges.len());
    let edge_free = |k: usize| free[s + k];
    let sink_free = |j: usize| free[s + m + j];
    Ok(ratio_balance_violations(inst, f, &Tolerance::exact(), |k, l| {
        let (a, b) = (&inst.edges[k], &inst.edges[l]);
        edge_free(k) && edge_free(l) && sink_free(a.account) && sink_free(b.account)
    }))
}

/// The network of ways to add flow on top of `f`: remaining security value,
/// remaining edge room, cancellable edge flow and remaining exposure.
/// Returns the network and, per edge, its forward and backward arc.
fn augmenting_network(inst: &Instance, f: &FlowAssignment) -> (FlowNetwork, Vec<(usize, usize)>) {
    let clamp = |x: Ratio| if x.is_negative() { ratio::zero() } else { x };
    let mut net = FlowNetwork::bipartite(inst.securities.len(), inst.accounts.len());
    for (i, out) in f.outflow(inst).into_iter().enumerate() {
        let node = net.security_node(i);
        net.add_arc(net.source, node, clamp(inst.value(i) - out));
    }
    let mut edge_arcs = Vec::with_capacity(inst.edges.len());
    for (e, x) in inst.edges.iter().zip(&f.values) {
        let (si, aj) = (net.security_node(e.security), net.account_node(e.account));
        let room = match &e.cap {
            Some(c) => Capacity::Finite(clamp(c - x)),
            None => Capacity::Infinite,
        };
        let fwd = net.add_arc(si, aj, room);
        let back = net.add_arc(aj, si, clamp(x.clone()));
        edge_arcs.push((fwd, back));
    }
    for (j, inflow) in f.inflow(inst).into_iter().enumerate() {
        let node = net.account_node(j);
        net.add_arc(node, net.sink, clamp(inst.exposure(j) - inflow));
    }
    (net, edge_arcs)
}

/// How much more flow could be routed on top of `f`; zero iff `f` is a
/// maximum flow.
pub fn check_maximality(inst: &Instance, f: &FlowAssignment) -> Result<Ratio, InfeasibleFlow> {
    f.check(inst)?;
    Ok(augmentable(inst, f))
}

fn augmentable(inst: &Instance, f: &FlowAssignment) -> Ratio {
    let (net, _) = augmenting_network(inst, f);
    flow::max_flow(&net).value
}

/// Extends `f` to a maximum flow.
pub fn complete_to_maximum(inst: &Instance, f: &FlowAssignment) -> FlowAssignment {
    let (net, edge_arcs) = augmenting_network(inst, f);
    let extra = flow::max_flow(&net);
    let values = f
        .values
        .iter()
        .zip(&edge_arcs)
        .map(|(x, &(fwd, back))| x + &extra.flow[fwd] - &extra.flow[back])
        .collect();
    FlowAssignment { values, over_coverage: f.over_coverage }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    Infeasible(String),
    Unbalanced(Violation),
    NotMaximum(Ratio),
}

impl Finding {
    pub fn describe(&self, inst: &Instance) -> String {
        match self {
            Finding::Infeasible(msg) => format!("infeasible: {msg}"),
            Finding::Unbalanced(v) => format!(
                "unbalanced: security `{}` backs account `{}` while account `{}` has risk ratio higher by {}",
                inst.securities[v.security].id,
                inst.accounts[v.account].id,
                inst.accounts[v.sibling].id,
                ratio::to_decimal(&v.gap, 9),
            ),
            Finding::NotMaximum(amount) => {
                format!("not maximum: {} more can be routed", ratio::to_decimal(&inst.unscale(amount), 9))
            }
        }
    }
}

fn capacity_findings(inst: &Instance, f: &FlowAssignment, tol: &Ratio) -> Vec<Finding> {
    let mut out = Vec::new();
    if f.values.len() != inst.edges.len() {
        out.push(Finding::Infeasible(format!("{} flow values for {} edges", f.values.len(), inst.edges.len())));
        return out;
    }
    let edge_name = |k: usize| {
        let e = &inst.edges[k];
        format!("{} -> {}", inst.securities[e.security].id, inst.accounts[e.account].id)
    };
    for (k, (e, x)) in inst.edges.iter().zip(&f.values).enumerate() {
        if *x < -tol.clone() {
            out.push(Finding::Infeasible(format!("negative flow on {}", edge_name(k))));
        }
        if let Some(cap) = &e.cap {
            if *x > cap + tol {
                out.push(Finding::Infeasible(format!("flow on {} exceeds its cap", edge_name(k))));
            }
        }
    }
    for (i, outflow) in f.outflow(inst).iter().enumerate() {
        if *outflow > inst.value(i) + tol {
            out.push(Finding::Infeasible(format!(
                "security `{}` pledges more than its value",
                inst.securities[i].id
            )));
        }
    }
    if !f.over_coverage {
        for (j, inflow) in f.inflow(inst).iter().enumerate() {
            if *inflow > inst.exposure(j) + tol {
                out.push(Finding::Infeasible(format!(
                    "account `{}` receives more than its exposure",
                    inst.accounts[j].id
                )));
            }
        }
    }
    out
}

/// Runs every flow check at the given tolerance and lists what fails.
pub fn audit_flow(inst: &Instance, f: &FlowAssignment, tol: &Tolerance) -> Vec<Finding> {
    let mut out = capacity_findings(inst, f, &tol.amount);
    if !out.is_empty() {
        return out;
    }
    out.extend(ratio_balance_violations(inst, f, tol, |_, _| true).into_iter().map(Finding::Unbalanced));
    let extra = augmentable(inst, f);
    if extra > tol.amount {
        out.push(Finding::NotMaximum(extra));
    }
    out
}

/// Max flow into `accounts` (a bit mask) when they may absorb anything:
/// each security gives the smaller of its value and its total claim room.
fn reachable_value(inst: &Instance, by_security: &[Vec<usize>], accounts: u64) -> Ratio {
    let mut total = ratio::zero();
    for (i, edges) in by_security.iter().enumerate() {
        let mut room = Some(ratio::zero());
        for &k in edges {
            let e = &inst.edges[k];
            if accounts & (1 << e.account) == 0 {
                continue;
            }
            room = match (room, &e.cap) {
                (Some(r), Some(c)) => Some(r + c),
                _ => None,
            };
        }
        let v = inst.value(i);
        total += match room {
            Some(r) if r < v => r,
            _ => v,
        };
    }
    total
}

/// Risk vector by enumerating account subsets.
///
/// The secured fraction of the worst phase is the minimum over account sets
/// `B` of (value that can reach `B`) / (exposure of `B`), capped at 1; the
/// union of minimizers is locked in and the rest is solved again with that
/// set contracted. Exponential in the number of accounts.
pub fn oracle_risk_vector(inst: &Instance, limit: usize) -> Result<Vec<Ratio>, OracleError> {
    let accounts = inst.accounts.len();
    if accounts > limit.min(63) {
        return Err(OracleError::TooLarge { accounts, limit });
    }
    if inst.has_priorities() {
        return Err(OracleError::Priorities);
    }
    let by_security = inst.edges_by_security();
    let full: u64 = (1u64 << accounts) - 1;
    let rho: Vec<Ratio> = (0..=full).map(|mask| reachable_value(inst, &by_security, mask)).collect();
    let exposure: Vec<Ratio> = (0..=full)
        .map(|mask| (0..accounts).filter(|j| mask & (1 << j) != 0).map(|j| inst.exposure(j)).sum())
        .collect();

    let mut risk = vec![ratio::one(); accounts];
    let mut locked: u64 = 0;
    while locked != full {
        let remaining = full & !locked;
        let base = &rho[locked as usize];
        let mut best: Option<Ratio> = None;
        let mut tight: u64 = 0;
        // Iterate nonempty submasks of `remaining`.
        let mut sub = remaining;
        while sub != 0 {
            let fraction = (&rho[(sub | locked) as usize] - base) / &exposure[sub as usize];
            match &best {
                Some(b) if fraction > *b => {}
                Some(b) if fraction == *b => tight |= sub,
                _ => {
                    best = Some(fraction);
                    tight = sub;
                }
            }
            sub = (sub - 1) & remaining;
        }
        let mut lambda = best.expect("remaining is nonempty");
        if lambda >= ratio::one() {
            lambda = ratio::one();
            tight = remaining;
        }
        for (j, r) in risk.iter_mut().enumerate() {
            if tight & (1 << j) != 0 {
                *r = ratio::one() - &lambda;
            }
        }
        locked |= tight;
    }
    Ok(risk)
}

/// Dense row-major matrix of exact rationals.
pub type Matrix = Vec<Vec<Ratio>>;

/// The objective `sum_j e_j r_j^2` as `1/2 x^T P x + q^T x + constant`
/// subject to `G x <= h`, over edge flows `x` in input edge order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QpStandardForm {
    pub qp_p: Matrix,
    pub q: Vec<Ratio>,
    pub g: Matrix,
    pub h: Vec<Ratio>,
    /// Account incidence: `K[j][k] = 1` iff edge `k` ends at account `j`.
    pub k: Matrix,
    /// Security incidence.
    pub v: Matrix,
    pub constant: Ratio,
}

fn incidence(rows: usize, endpoints: impl Iterator<Item = usize>, cols: usize) -> Matrix {
    let mut m = vec![vec![ratio::zero(); cols]; rows];
    for (k, r) in endpoints.enumerate() {
        m[r][k] = ratio::one();
    }
    m
}

pub fn qp_standard_form(inst: &Instance) -> QpStandardForm {
    let m = inst.edges.len();
    let k = incidence(inst.accounts.len(), inst.edges.iter().map(|e| e.account), m);
    let v = incidence(inst.securities.len(), inst.edges.iter().map(|e| e.security), m);
    // P = 2 K^T diag(1/e) K: nonzero exactly between edges into one account.
    let mut qp_p = vec![vec![ratio::zero(); m]; m];
    for (a, ea) in inst.edges.iter().enumerate() {
        for (b, eb) in inst.edges.iter().enumerate() {
            if ea.account == eb.account {
                qp_p[a][b] = ratio::int(2) / inst.exposure(ea.account);
            }
        }
    }
    let q = vec![ratio::int(-2); m];

    let mut g = Vec::new();
    let mut h = Vec::new();
    for row in 0..m {
        let mut r = vec![ratio::zero(); m];
        r[row] = ratio::int(-1);
        g.push(r);
        h.push(ratio::zero());
    }
    for (i, row) in v.iter().enumerate() {
        g.push(row.clone());
        h.push(inst.value(i));
    }
    for (j, row) in k.iter().enumerate() {
        g.push(row.clone());
        h.push(inst.exposure(j));
    }
    for (idx, e) in inst.edges.iter().enumerate() {
        if let Some(cap) = &e.cap {
            let mut r = vec![ratio::zero(); m];
            r[idx] = ratio::one();
            g.push(r);
            h.push(cap.clone());
        }
    }
    let constant = ratio::from_big(&inst.total_exposure());
    QpStandardForm { qp_p, q, g, h, k, v, constant }
}

impl QpStandardForm {
    /// `1/2 x^T P x + q^T x + constant`, skipping zero entries of `P`.
    pub fn objective(&self, x: &[Ratio]) -> Ratio {
        let mut quad = ratio::zero();
        for (a, row) in self.qp_p.iter().enumerate() {
            if x[a].is_zero() {
                continue;
            }
            let mut acc = ratio::zero();
            for (b, p) in row.iter().enumerate() {
                if !p.is_zero() && !x[b].is_zero() {
                    acc += p * &x[b];
                }
            }
            quad += &x[a] * acc;
        }
        let linear: Ratio = self.q.iter().zip(x).map(|(q, x)| q * x).sum();
        quad / ratio::int(2) + linear + &self.constant
    }

    pub fn is_feasible(&self, x: &[Ratio]) -> bool {
        self.g.iter().zip(&self.h).all(|(row, h)| {
            let lhs: Ratio = row.iter().zip(x).filter(|(g, _)| !g.is_zero()).map(|(g, x)| g * x).sum();
            lhs <= *h
        })
    }

    /// Plain-text export: each matrix as a `name rows cols` line followed by
    /// its rows, entries separated by single spaces; vectors are columns.
    pub fn to_text(&self) -> String {
        fn entry(r: &Ratio) -> String {
            if r.is_integer() {
                r.numer().to_string()
            } else {
                format!("{}/{}", r.numer(), r.denom())
            }
        }
        fn matrix(out: &mut String, name: &str, rows: &Matrix, cols: usize) {
            out.push_str(&format!("{name} {} {cols}\n", rows.len()));
            for row in rows {
                out.push_str(&row.iter().map(entry).collect::<Vec<_>>().join(" "));
                out.push('\n');
            }
        }
        let column = |v: &[Ratio]| v.iter().map(|x| vec![x.clone()]).collect::<Matrix>();
        let m = self.q.len();
        let mut out = String::new();
        matrix(&mut out, "qp_P", &self.qp_p, m);
        matrix(&mut out, "q", &column(&self.q), 1);
        matrix(&mut out, "G", &self.g, m);
        matrix(&mut out, "h", &column(&self.h), 1);
        matrix(&mut out, "K", &self.k, m);
        matrix(&mut out, "V", &self.v, m);
        matrix(&mut out, "constant", &vec![vec![self.constant.clone()]], 1);
        out
    }
}

fn float_objective(inst: &Instance, x: &[f64]) -> f64 {
    let mut inflow = vec![0.0; inst.accounts.len()];
    for (e, f) in inst.edges.iter().zip(x) {
        inflow[e.account] += f;
    }
    inflow
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let e = ratio::to_f64(&inst.exposure(j));
            let r = (e - f) / e;
            e * r * r
        })
        .sum()
}

/// Largest gap between `-2 r_j` and a central difference of the objective
/// along each edge `ij`, in floating point.
pub fn gradient_check(inst: &Instance, f: &FlowAssignment, step: f64) -> Result<f64, InfeasibleFlow> {
    let risk = model::risk_vector(inst, f)?;
    let x: Vec<f64> = f.values.iter().map(ratio::to_f64).collect();
    let mut worst: f64 = 0.0;
    for (k, e) in inst.edges.iter().enumerate() {
        let mut up = x.clone();
        let mut down = x.clone();
        up[k] += step;
        down[k] -= step;
        let fd = (float_objective(inst, &up) - float_objective(inst, &down)) / (2.0 * step);
        let analytic = -2.0 * ratio::to_f64(&risk[e.account]);
        worst = worst.max((fd - analytic).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeOutcome {
    pub trials: usize,
    pub reference: Ratio,
    /// Candidates that beat the reference, with their objective.
    pub better: Vec<(FlowAssignment, Ratio)>,
}

impl ProbeOutcome {
    pub fn ok(&self) -> bool {
        self.better.is_empty()
    }
}

impl fmt::Display for ProbeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} candidates, {} better than {}", self.trials, self.better.len(), self.reference)
    }
}

/// Greedy flow along a random edge order, completed to a maximum flow.
pub fn random_maximum_flow<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> FlowAssignment {
    let mut order: Vec<usize> = (0..inst.edges.len()).collect();
    order.shuffle(rng);
    let mut value: Vec<Ratio> = (0..inst.securities.len()).map(|i| inst.value(i)).collect();
    let mut room: Vec<Ratio> = (0..inst.accounts.len()).map(|j| inst.exposure(j)).collect();
    let mut values = vec![ratio::zero(); inst.edges.len()];
    for k in order {
        let e = &inst.edges[k];
        let mut amount = ratio::min(&value[e.security], &room[e.account]);
        if let Some(c) = &e.cap {
            amount = ratio::min(&amount, c);
        }
        // Sometimes stop short so completion has to reroute.
        if rng.gen_bool(0.3) {
            amount *= Ratio::new(BigInt::from(rng.gen_range(0..4)), BigInt::from(4));
        }
        value[e.security] -= &amount;
        room[e.account] -= &amount;
        values[k] = amount;
    }
    complete_to_maximum(inst, &FlowAssignment::from_values(values))
}

/// Compares the objective of `f` against random maximum flows and random
/// convex combinations of them with `f`. A minimizer is never beaten.
pub fn local_opt_probe<R: Rng + ?Sized>(
    inst: &Instance,
    f: &FlowAssignment,
    trials: usize,
    rng: &mut R,
) -> Result<ProbeOutcome, InfeasibleFlow> {
    let reference = model::mwsr_objective(inst, f)?;
    let mut better = Vec::new();
    for trial in 0..trials {
        let mut candidate = random_maximum_flow(inst, rng);
        if trial % 2 == 1 {
            let t = Ratio::new(BigInt::from(rng.gen_range(1..8)), BigInt::from(8));
            let s = ratio::one() - &t;
            candidate.values =
                candidate.values.iter().zip(&f.values).map(|(c, x)| &t * c + &s * x).collect();
        }
        let objective = model::mwsr_objective(inst, &candidate)?;
        if objective < reference {
            better.push((candidate, objective));
        }
    }
    Ok(ProbeOutcome { trials, reference, better })
}
