//! Exact network-flow kernels over rational capacities.
//!
//! Maximum flow uses Dinic's blocking-flow phases, so the number of
//! augmentations depends only on the graph shape and never on the size of the
//! capacities. Minimum cost flow is the primal-dual variant of successive
//! shortest paths: each round computes exact shortest distances over
//! arbitrary-precision costs and then saturates every shortest path at once
//! with a blocking flow on the admissible subgraph.

use std::collections::{BTreeSet, VecDeque};

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::ratio::{self, Ratio};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Capacity {
    Finite(Ratio),
    Infinite,
}

impl Capacity {
    pub fn finite(&self) -> Option<&Ratio> {
        match self {
            Capacity::Finite(c) => Some(c),
            Capacity::Infinite => None,
        }
    }

    fn residual(&self, flow: &Ratio) -> Capacity {
        match self {
            Capacity::Finite(c) => Capacity::Finite(c - flow),
            Capacity::Infinite => Capacity::Infinite,
        }
    }

    fn is_positive(&self) -> bool {
        match self {
            Capacity::Finite(c) => c.is_positive(),
            Capacity::Infinite => true,
        }
    }
}

impl From<Ratio> for Capacity {
    fn from(c: Ratio) -> Self {
        Capacity::Finite(c)
    }
}

impl From<Option<Ratio>> for Capacity {
    fn from(c: Option<Ratio>) -> Self {
        c.map_or(Capacity::Infinite, Capacity::Finite)
    }
}

/// What a node stands for in the collateral network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Source,
    Sink,
    Security(usize),
    Account(usize),
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: Capacity,
    pub cost: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowNetwork {
    pub roles: Vec<NodeRole>,
    pub source: usize,
    pub sink: usize,
    pub arcs: Vec<Arc>,
    account_offset: usize,
}

impl FlowNetwork {
    /// Source is node 0, sink is node 1, then securities, then accounts.
    pub fn bipartite(securities: usize, accounts: usize) -> Self {
        let mut roles = vec![NodeRole::Source, NodeRole::Sink];
        roles.extend((0..securities).map(NodeRole::Security));
        roles.extend((0..accounts).map(NodeRole::Account));
        Self { roles, source: 0, sink: 1, arcs: Vec::new(), account_offset: 2 + securities }
    }

    pub fn security_node(&self, i: usize) -> usize {
        2 + i
    }

    pub fn account_node(&self, j: usize) -> usize {
        self.account_offset + j
    }

    pub fn add_node(&mut self, role: NodeRole) -> usize {
        self.roles.push(role);
        self.roles.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: impl Into<Capacity>) -> usize {
        self.add_arc_with_cost(from, to, capacity, BigInt::zero())
    }

    pub fn add_arc_with_cost(
        &mut self,
        from: usize,
        to: usize,
        capacity: impl Into<Capacity>,
        cost: BigInt,
    ) -> usize {
        let capacity = capacity.into();
        if let Capacity::Finite(c) = &capacity {
            assert!(!c.is_negative(), "arc capacity must be non-negative");
        }
        self.arcs.push(Arc { from, to, capacity, cost });
        self.arcs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxFlow {
    pub value: Ratio,
    /// Flow per arc, indexed like `FlowNetwork::arcs`.
    pub flow: Vec<Ratio>,
}

/// Partition of the nodes by reachability from the source in a residual graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualCut {
    pub reachable: Vec<bool>,
    pub unreachable_securities: BTreeSet<usize>,
    pub unreachable_accounts: BTreeSet<usize>,
}

impl ResidualCut {
    fn from_reachable(net: &FlowNetwork, reachable: Vec<bool>) -> Self {
        let mut unreachable_securities = BTreeSet::new();
        let mut unreachable_accounts = BTreeSet::new();
        for (v, role) in net.roles.iter().enumerate() {
            if reachable[v] {
                continue;
            }
            match *role {
                NodeRole::Security(i) => {
                    unreachable_securities.insert(i);
                }
                NodeRole::Account(j) => {
                    unreachable_accounts.insert(j);
                }
                _ => {}
            }
        }
        Self { reachable, unreachable_securities, unreachable_accounts }
    }

    /// Capacity of the arcs leaving the reachable side; `None` if one of them
    /// is unbounded.
    pub fn capacity(&self, net: &FlowNetwork) -> Option<Ratio> {
        let mut total = ratio::zero();
        for arc in &net.arcs {
            if self.reachable[arc.from] && !self.reachable[arc.to] {
                total += arc.capacity.finite()?;
            }
        }
        Some(total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("the flow admits an augmenting path and is not maximum")]
    NotMaximum,
    #[error("flow vector does not match the network")]
    Mismatch,
}

/// Residual graph with paired forward/backward entries: entry `2a` is arc `a`
/// forward, `2a + 1` its reverse.
struct Residual {
    adjacency: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<Capacity>,
}

impl Residual {
    fn new(net: &FlowNetwork, flow: Option<&[Ratio]>, allowed: impl Fn(usize) -> bool) -> Self {
        let n = net.node_count();
        let mut adjacency = vec![Vec::new(); n];
        let mut to = Vec::with_capacity(net.arcs.len() * 2);
        let mut cap = Vec::with_capacity(net.arcs.len() * 2);
        for (a, arc) in net.arcs.iter().enumerate() {
            let f = flow.map_or_else(ratio::zero, |fl| fl[a].clone());
            let (fwd, bwd) = if allowed(a) {
                (arc.capacity.residual(&f), Capacity::Finite(f))
            } else {
                (Capacity::Finite(ratio::zero()), Capacity::Finite(ratio::zero()))
            };
            adjacency[arc.from].push(to.len());
            to.push(arc.to);
            cap.push(fwd);
            adjacency[arc.to].push(to.len());
            to.push(arc.from);
            cap.push(bwd);
        }
        Self { adjacency, to, cap }
    }

    fn levels(&self, source: usize) -> Vec<Option<usize>> {
        let mut level = vec![None; self.adjacency.len()];
        level[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adjacency[u] {
                let v = self.to[e];
                if level[v].is_none() && self.cap[e].is_positive() {
                    level[v] = Some(level[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn push(&mut self, e: usize, amount: &Ratio) {
        if let Capacity::Finite(c) = &mut self.cap[e] {
            *c -= amount;
        }
        if let Capacity::Finite(c) = &mut self.cap[e ^ 1] {
            *c += amount;
        }
    }

    /// Sends flow along level-increasing residual arcs. `limit` of `None`
    /// means unbounded, which is only legal away from the source.
    fn blocking_dfs(
        &mut self,
        u: usize,
        sink: usize,
        limit: Option<Ratio>,
        level: &[Option<usize>],
        next: &mut [usize],
    ) -> Option<Ratio> {
        if u == sink {
            return Some(limit.expect("unbounded source-sink path of infinite arcs"));
        }
        while next[u] < self.adjacency[u].len() {
            let e = self.adjacency[u][next[u]];
            let v = self.to[e];
            if self.cap[e].is_positive() && level[v] == level[u].map(|l| l + 1) {
                let bound = match (&limit, &self.cap[e]) {
                    (None, Capacity::Infinite) => None,
                    (None, Capacity::Finite(c)) => Some(c.clone()),
                    (Some(l), Capacity::Infinite) => Some(l.clone()),
                    (Some(l), Capacity::Finite(c)) => Some(ratio::min(l, c)),
                };
                if let Some(pushed) = self.blocking_dfs(v, sink, bound, level, next) {
                    if pushed.is_positive() {
                        self.push(e, &pushed);
                        return Some(pushed);
                    }
                }
            }
            next[u] += 1;
        }
        None
    }

    fn run_dinic(&mut self, source: usize, sink: usize) -> Ratio {
        let mut total = ratio::zero();
        loop {
            let level = self.levels(source);
            if level[sink].is_none() {
                return total;
            }
            let mut next = vec![0; self.adjacency.len()];
            while let Some(pushed) = self.blocking_dfs(source, sink, None, &level, &mut next) {
                total += pushed;
            }
        }
    }

    fn flows(&self, net: &FlowNetwork) -> Vec<Ratio> {
        (0..net.arcs.len())
            .map(|a| match &self.cap[2 * a + 1] {
                Capacity::Finite(f) => f.clone(),
                Capacity::Infinite => unreachable!("reverse residuals are finite"),
            })
            .collect()
    }
}

pub fn max_flow(net: &FlowNetwork) -> MaxFlow {
    let mut residual = Residual::new(net, None, |_| true);
    let value = residual.run_dinic(net.source, net.sink);
    MaxFlow { value, flow: residual.flows(net) }
}

/// Nodes reachable from `start` through arcs with positive residual capacity.
pub fn residual_reachable(net: &FlowNetwork, flow: &[Ratio], start: usize) -> Vec<bool> {
    let residual = Residual::new(net, Some(flow), |_| true);
    residual.levels(start).iter().map(Option::is_some).collect()
}

/// Residual reachability from the source for a maximum flow.
pub fn residual_unreachable(net: &FlowNetwork, flow: &[Ratio]) -> Result<ResidualCut, FlowError> {
    if flow.len() != net.arcs.len() {
        return Err(FlowError::Mismatch);
    }
    let reachable = residual_reachable(net, flow, net.source);
    if reachable[net.sink] {
        return Err(FlowError::NotMaximum);
    }
    Ok(ResidualCut::from_reachable(net, reachable))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinCostFlow {
    pub value: Ratio,
    pub cost: Ratio,
    pub flow: Vec<Ratio>,
    /// Node potentials under which every residual arc has non-negative reduced
    /// cost, including the arcs closing the flow into a circulation (see
    /// [`closing_cost`]).
    pub potentials: Vec<BigInt>,
}

/// The cost given to the virtual sink-to-source arc when potentials are
/// certified: large enough that any change in flow value dominates any
/// change in arc costs.
pub fn closing_cost(net: &FlowNetwork) -> BigInt {
    net.arcs.iter().map(|a| a.cost.abs()).sum::<BigInt>() + 1u32
}

/// Shortest distances by Bellman-Ford over residual arcs with exact costs.
/// `starts` all begin at distance zero. The residual graph must have no
/// negative cycle.
fn shortest_distances(
    residual: &Residual,
    costs: &[BigInt],
    starts: &[usize],
) -> Vec<Option<BigInt>> {
    let n = residual.adjacency.len();
    let mut dist: Vec<Option<BigInt>> = vec![None; n];
    let mut queue = VecDeque::new();
    let mut queued = vec![false; n];
    for &s in starts {
        dist[s] = Some(BigInt::zero());
        queue.push_back(s);
        queued[s] = true;
    }
    let mut relaxations = 0usize;
    let limit = n.saturating_mul(residual.to.len()).saturating_add(n) + 1;
    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        let du = dist[u].clone().expect("queued nodes have distances");
        for &e in &residual.adjacency[u] {
            if !residual.cap[e].is_positive() {
                continue;
            }
            let v = residual.to[e];
            let candidate = &du + &costs[e];
            if dist[v].as_ref().is_none_or(|dv| candidate < *dv) {
                dist[v] = Some(candidate);
                if !queued[v] {
                    queued[v] = true;
                    queue.push_back(v);
                }
            }
        }
        relaxations += 1;
        assert!(relaxations <= limit, "negative cycle in residual graph");
    }
    dist
}

/// Minimum-cost maximum flow. Costs are per unit of flow and may be negative
/// provided the zero flow has no negative residual cycle.
pub fn min_cost_max_flow(net: &FlowNetwork) -> MinCostFlow {
    successive_shortest_paths(net, Some(closing_cost(net)))
}

/// Minimum-cost flow of any value: augments only while the cheapest path
/// has negative cost. The potentials certify the circulation with a free
/// zero-cost closing arc.
pub fn min_cost_flow(net: &FlowNetwork) -> MinCostFlow {
    successive_shortest_paths(net, None)
}

/// `closing`: the cost `-K` of the closing arc when the value must be
/// maximum, `None` when the value is free.
fn successive_shortest_paths(net: &FlowNetwork, closing: Option<BigInt>) -> MinCostFlow {
    let costs: Vec<BigInt> = net.arcs.iter().flat_map(|a| [a.cost.clone(), -a.cost.clone()]).collect();
    let mut residual = Residual::new(net, None, |_| true);
    let mut value = ratio::zero();
    loop {
        let dist = shortest_distances(&residual, &costs, &[net.source]);
        let Some(dt) = dist[net.sink].clone() else { break };
        if closing.is_none() && !dt.is_negative() {
            break;
        }
        // Blocking flow over the tight residual arcs: those on some shortest
        // path from the source that can still reach the sink tightly.
        let tight = |e: usize, residual: &Residual, from: usize| -> bool {
            match (&dist[from], &dist[residual.to[e]]) {
                (Some(du), Some(dv)) => residual.cap[e].is_positive() && du + &costs[e] == *dv,
                _ => false,
            }
        };
        let mut admissible = Residual {
            adjacency: vec![Vec::new(); residual.adjacency.len()],
            to: residual.to.clone(),
            cap: residual.cap.clone(),
        };
        for u in 0..residual.adjacency.len() {
            for &e in &residual.adjacency[u] {
                if tight(e, &residual, u) {
                    admissible.adjacency[u].push(e);
                    admissible.adjacency[residual.to[e]].push(e ^ 1);
                }
            }
        }
        // Reverse entries let the blocking flow cancel within this round; they
        // have zero reduced cost so they stay on shortest paths.
        for u in 0..admissible.adjacency.len() {
            admissible.adjacency[u].sort_unstable();
            admissible.adjacency[u].dedup();
        }
        let before = value.clone();
        value += admissible.run_dinic(net.source, net.sink);
        residual.cap = admissible.cap;
        assert!(value > before, "shortest path round at distance {dt} made no progress");
    }
    let flow = residual.flows(net);
    let cost = net
        .arcs
        .iter()
        .zip(&flow)
        .map(|(a, f)| ratio::from_big(&a.cost) * f)
        .sum();
    let potentials = certify_potentials(net, &flow, &value, closing.unwrap_or_default());
    MinCostFlow { value, cost, flow, potentials }
}

/// Potentials from shortest distances out of a virtual root on the residual
/// graph extended by the closing arcs `t -> s` (cost `-K`, unbounded) and
/// `s -> t` (cost `K`, capacity = flow value).
fn certify_potentials(net: &FlowNetwork, flow: &[Ratio], value: &Ratio, k: BigInt) -> Vec<BigInt> {
    let mut extended = net.clone();
    let closing = extended.add_arc_with_cost(net.sink, net.source, Capacity::Infinite, -k);
    let mut ext_flow = flow.to_vec();
    ext_flow.push(value.clone());
    let residual = Residual::new(&extended, Some(&ext_flow), |_| true);
    let costs: Vec<BigInt> =
        extended.arcs.iter().flat_map(|a| [a.cost.clone(), -a.cost.clone()]).collect();
    debug_assert_eq!(closing, net.arcs.len());
    let all: Vec<usize> = (0..net.node_count()).collect();
    shortest_distances(&residual, &costs, &all)
        .into_iter()
        .map(|d| d.expect("every node is a start"))
        .collect()
}

/// `cost + pi(from) - pi(to)`.
pub fn reduced_cost(arc: &Arc, potentials: &[BigInt]) -> BigInt {
    &arc.cost + &potentials[arc.from] - &potentials[arc.to]
}

/// Arc with lower and upper bounds for circulation feasibility.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundedArc {
    pub from: usize,
    pub to: usize,
    pub lower: Ratio,
    pub upper: Capacity,
}

/// Finds a circulation with `lower <= flow <= upper` on every arc, or `None`
/// when none exists. Uses the usual reduction to one maximum flow from a
/// super source to a super sink.
pub fn feasible_circulation(node_count: usize, arcs: &[BoundedArc]) -> Option<Vec<Ratio>> {
    let mut roles = vec![NodeRole::Auxiliary; node_count];
    roles.push(NodeRole::Source);
    roles.push(NodeRole::Sink);
    let source = node_count;
    let sink = node_count + 1;
    let mut net = FlowNetwork { roles, source, sink, arcs: Vec::new(), account_offset: source };
    let mut excess = vec![ratio::zero(); node_count];
    for arc in arcs {
        if let Capacity::Finite(u) = &arc.upper {
            if *u < arc.lower {
                return None;
            }
        }
        let upper = match &arc.upper {
            Capacity::Finite(u) => Capacity::Finite(u - &arc.lower),
            Capacity::Infinite => Capacity::Infinite,
        };
        net.add_arc(arc.from, arc.to, upper);
        excess[arc.to] += &arc.lower;
        excess[arc.from] -= &arc.lower;
    }
    let mut demand = ratio::zero();
    for (v, x) in excess.iter().enumerate() {
        if x.is_positive() {
            net.add_arc(source, v, x.clone());
            demand += x;
        } else if x.is_negative() {
            net.add_arc(v, sink, -x.clone());
        }
    }
    let mf = max_flow(&net);
    if mf.value != demand {
        return None;
    }
    Some(arcs.iter().zip(&mf.flow).map(|(arc, f)| &arc.lower + f).collect())
}

/// Reachability from `start` in the residual graph of a bounded circulation:
/// forward while below the upper bound, backward while above the lower bound.
pub fn bounded_residual_reachable(
    node_count: usize,
    arcs: &[BoundedArc],
    flow: &[Ratio],
    start: usize,
) -> Vec<bool> {
    let mut adjacency = vec![Vec::new(); node_count];
    for (arc, f) in arcs.iter().zip(flow) {
        let below_upper = match &arc.upper {
            Capacity::Finite(u) => f < u,
            Capacity::Infinite => true,
        };
        if below_upper {
            adjacency[arc.from].push(arc.to);
        }
        if *f > arc.lower {
            adjacency[arc.to].push(arc.from);
        }
    }
    let mut seen = vec![false; node_count];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}
