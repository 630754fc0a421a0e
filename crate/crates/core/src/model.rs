//! Collateral instances, flow assignments and the derived per-account figures.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::{self, Ratio, ScaledDecimal};

/// Which array of the input an error refers to, together with the element
/// index, so front ends can point at the offending entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Securities,
    Accounts,
    Edges,
}

impl Section {
    pub fn key(self) -> &'static str {
        match self {
            Section::Securities => "securities",
            Section::Accounts => "accounts",
            Section::Edges => "edges",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("account `{id}` has non-positive exposure {exposure}")]
    NonPositiveExposure { index: usize, id: String, exposure: String },
    #[error("security `{id}` has negative value {value}")]
    NegativeValue { index: usize, id: String, value: String },
    #[error("edge {security} -> {account} has a negative cap")]
    NegativeCap { index: usize, security: String, account: String },
    #[error("duplicate edge {security} -> {account}")]
    DuplicateEdge { index: usize, security: String, account: String },
    #[error("edge references unknown {side} `{id}`")]
    DanglingEndpoint { index: usize, side: &'static str, id: String },
    #[error("some edges carry a priority and others do not")]
    PartialPriorities { index: usize },
    #[error("priorities must be the consecutive classes 1..P, found {found:?}")]
    PriorityGaps { found: Vec<u32> },
    #[error("duplicate {side} id `{id}`")]
    DuplicateId { section: Section, index: usize, side: &'static str, id: String },
    #[error("{what}: {source}")]
    BadNumber {
        section: Section,
        index: usize,
        what: String,
        source: ratio::DecimalParseError,
    },
}

impl InstanceError {
    /// The input element the error is about, if it is about a single one.
    pub fn anchor(&self) -> Option<(Section, usize)> {
        use InstanceError::*;
        match self {
            NonPositiveExposure { index, .. } => Some((Section::Accounts, *index)),
            NegativeValue { index, .. } => Some((Section::Securities, *index)),
            NegativeCap { index, .. }
            | DuplicateEdge { index, .. }
            | DanglingEndpoint { index, .. }
            | PartialPriorities { index } => Some((Section::Edges, *index)),
            DuplicateId { section, index, .. } | BadNumber { section, index, .. } => {
                Some((*section, *index))
            }
            PriorityGaps { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("infeasible flow: {0}")]
pub struct InfeasibleFlow(pub String);

/// A JSON scalar that is either a number or a string of decimal digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawNumber {
    Number(serde_json::Number),
    Text(String),
}

impl RawNumber {
    pub fn text(&self) -> String {
        match self {
            RawNumber::Number(n) => n.to_string(),
            RawNumber::Text(s) => s.clone(),
        }
    }
}

impl From<i64> for RawNumber {
    fn from(v: i64) -> Self {
        RawNumber::Number(v.into())
    }
}

impl From<&str> for RawNumber {
    fn from(v: &str) -> Self {
        RawNumber::Text(v.to_string())
    }
}

/// Node ids may be written as JSON strings or integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawId {
    Int(i64),
    Text(String),
}

impl fmt::Display for RawId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawId::Int(i) => write!(f, "{i}"),
            RawId::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for RawId {
    fn from(v: &str) -> Self {
        RawId::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSecurity {
    pub id: RawId,
    pub value: RawNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAccount {
    pub id: RawId,
    pub exposure: RawNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEdge {
    pub security: RawId,
    pub account: RawId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<RawNumber>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
}

/// The parsed but unvalidated instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInstance {
    pub securities: Vec<RawSecurity>,
    pub accounts: Vec<RawAccount>,
    pub edges: Vec<RawEdge>,
}

impl RawInstance {
    /// Builds an all-integer instance; ids are the 1-based positions.
    pub fn from_integers(values: &[i64], exposures: &[i64], edges: &[(usize, usize)]) -> Self {
        RawInstance {
            securities: values
                .iter()
                .enumerate()
                .map(|(i, &v)| RawSecurity { id: RawId::Text((i + 1).to_string()), value: v.into() })
                .collect(),
            accounts: exposures
                .iter()
                .enumerate()
                .map(|(j, &e)| RawAccount { id: RawId::Text((j + 1).to_string()), exposure: e.into() })
                .collect(),
            edges: edges
                .iter()
                .map(|&(i, j)| RawEdge {
                    security: RawId::Text(i.to_string()),
                    account: RawId::Text(j.to_string()),
                    cap: None,
                    priority: None,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Security {
    pub id: String,
    pub value: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Account {
    pub id: String,
    pub exposure: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub security: usize,
    pub account: usize,
    pub cap: Option<Ratio>,
    pub priority: Option<u32>,
}

/// A validated collateral graph. All amounts are integers in units of
/// `1/scale` of the input amounts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub securities: Vec<Security>,
    pub accounts: Vec<Account>,
    pub edges: Vec<Edge>,
    pub scale: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validated {
    pub instance: Instance,
    pub warnings: Vec<String>,
}

pub fn validate_instance(raw: &RawInstance) -> Result<Validated, InstanceError> {
    let parse = |section: Section, index: usize, what: String, n: &RawNumber| {
        ScaledDecimal::parse(&n.text()).map_err(|source| InstanceError::BadNumber {
            section,
            index,
            what,
            source,
        })
    };

    let mut sec_index = HashMap::new();
    let mut values = Vec::with_capacity(raw.securities.len());
    for (i, s) in raw.securities.iter().enumerate() {
        let id = s.id.to_string();
        if sec_index.insert(id.clone(), i).is_some() {
            return Err(InstanceError::DuplicateId {
                section: Section::Securities,
                index: i,
                side: "security",
                id,
            });
        }
        let v = parse(Section::Securities, i, format!("value of security `{id}`"), &s.value)?;
        if v.digits.is_negative() {
            return Err(InstanceError::NegativeValue { index: i, id, value: s.value.text() });
        }
        values.push(v);
    }

    let mut acc_index = HashMap::new();
    let mut exposures = Vec::with_capacity(raw.accounts.len());
    for (j, a) in raw.accounts.iter().enumerate() {
        let id = a.id.to_string();
        if acc_index.insert(id.clone(), j).is_some() {
            return Err(InstanceError::DuplicateId {
                section: Section::Accounts,
                index: j,
                side: "account",
                id,
            });
        }
        let e = parse(Section::Accounts, j, format!("exposure of account `{id}`"), &a.exposure)?;
        if !e.digits.is_positive() {
            return Err(InstanceError::NonPositiveExposure { index: j, id, exposure: a.exposure.text() });
        }
        exposures.push(e);
    }

    let with_priority = raw.edges.iter().filter(|e| e.priority.is_some()).count();
    if with_priority != 0 && with_priority != raw.edges.len() {
        let index = raw.edges.iter().position(|e| e.priority.is_none()).unwrap_or(0);
        return Err(InstanceError::PartialPriorities { index });
    }

    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(raw.edges.len());
    let mut caps = Vec::with_capacity(raw.edges.len());
    for (k, e) in raw.edges.iter().enumerate() {
        let sid = e.security.to_string();
        let aid = e.account.to_string();
        let &i = sec_index.get(&sid).ok_or(InstanceError::DanglingEndpoint {
            index: k,
            side: "security",
            id: sid.clone(),
        })?;
        let &j = acc_index.get(&aid).ok_or(InstanceError::DanglingEndpoint {
            index: k,
            side: "account",
            id: aid.clone(),
        })?;
        if !seen.insert((i, j)) {
            return Err(InstanceError::DuplicateEdge { index: k, security: sid, account: aid });
        }
        let cap = match &e.cap {
            Some(c) => {
                let c = parse(Section::Edges, k, format!("cap of edge {sid} -> {aid}"), c)?;
                if c.digits.is_negative() {
                    return Err(InstanceError::NegativeCap { index: k, security: sid, account: aid });
                }
                Some(c)
            }
            None => None,
        };
        if e.priority == Some(0) {
            return Err(InstanceError::PriorityGaps { found: vec![0] });
        }
        caps.push(cap);
        edges.push((i, j, e.priority));
    }

    if with_priority > 0 {
        let classes: BTreeSet<u32> = edges.iter().filter_map(|e| e.2).collect();
        let expected: BTreeSet<u32> = (1..=classes.len() as u32).collect();
        if classes != expected {
            return Err(InstanceError::PriorityGaps { found: classes.into_iter().collect() });
        }
    }

    let decimals = values
        .iter()
        .chain(&exposures)
        .chain(caps.iter().flatten())
        .map(|d| d.decimals)
        .max()
        .unwrap_or(0);
    let scale = ratio::pow10(decimals);

    let mut degree = vec![0usize; values.len()];
    for &(i, _, _) in &edges {
        degree[i] += 1;
    }
    let mut warnings = Vec::new();
    let mut new_index = vec![None; values.len()];
    let mut securities = Vec::new();
    for (i, s) in raw.securities.iter().enumerate() {
        if degree[i] == 0 {
            warnings.push(format!("security `{}` has no eligible account and was removed", s.id));
            continue;
        }
        new_index[i] = Some(securities.len());
        securities.push(Security { id: s.id.to_string(), value: values[i].scaled_to(decimals) });
    }
    let accounts = raw
        .accounts
        .iter()
        .zip(&exposures)
        .map(|(a, e)| Account { id: a.id.to_string(), exposure: e.scaled_to(decimals) })
        .collect();
    let edges = edges
        .into_iter()
        .zip(caps)
        .map(|((i, j, priority), cap)| Edge {
            security: new_index[i].expect("securities with edges are kept"),
            account: j,
            cap: cap.map(|c| ratio::from_big(&c.scaled_to(decimals))),
            priority,
        })
        .collect();

    Ok(Validated { instance: Instance { securities, accounts, edges, scale }, warnings })
}

impl Instance {
    pub fn from_raw(raw: &RawInstance) -> Result<Self, InstanceError> {
        validate_instance(raw).map(|v| v.instance)
    }

    /// Convenience constructor for integer instances with 1-based ids.
    pub fn from_integers(values: &[i64], exposures: &[i64], edges: &[(usize, usize)]) -> Self {
        Self::from_raw(&RawInstance::from_integers(values, exposures, edges))
            .expect("valid integer instance")
    }

    /// `n = |S| + |A|`.
    pub fn node_count(&self) -> usize {
        self.securities.len() + self.accounts.len()
    }

    /// `M`, the largest value or exposure.
    pub fn max_amount(&self) -> BigInt {
        self.securities
            .iter()
            .map(|s| &s.value)
            .chain(self.accounts.iter().map(|a| &a.exposure))
            .max()
            .cloned()
            .unwrap_or_default()
    }

    pub fn total_value(&self) -> BigInt {
        self.securities.iter().map(|s| &s.value).sum()
    }

    pub fn total_exposure(&self) -> BigInt {
        self.accounts.iter().map(|a| &a.exposure).sum()
    }

    pub fn has_caps(&self) -> bool {
        self.edges.iter().any(|e| e.cap.is_some())
    }

    pub fn has_priorities(&self) -> bool {
        !self.edges.is_empty() && self.edges.iter().all(|e| e.priority.is_some())
    }

    pub fn num_priorities(&self) -> u32 {
        self.edges.iter().filter_map(|e| e.priority).max().unwrap_or(0)
    }

    pub fn edge_index(&self, security: usize, account: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.security == security && e.account == account)
    }

    pub fn security_index(&self, id: &str) -> Option<usize> {
        self.securities.iter().position(|s| s.id == id)
    }

    pub fn account_index(&self, id: &str) -> Option<usize> {
        self.accounts.iter().position(|a| a.id == id)
    }

    /// Edge indices grouped by security.
    pub fn edges_by_security(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.securities.len()];
        for (k, e) in self.edges.iter().enumerate() {
            out[e.security].push(k);
        }
        out
    }

    pub fn exposure(&self, account: usize) -> Ratio {
        ratio::from_big(&self.accounts[account].exposure)
    }

    pub fn value(&self, security: usize) -> Ratio {
        ratio::from_big(&self.securities[security].value)
    }

    /// Converts an internal amount back to input units.
    pub fn unscale(&self, amount: &Ratio) -> Ratio {
        amount / ratio::from_big(&self.scale)
    }

    /// Converts an amount given in input units into internal units.
    pub fn rescale(&self, amount: &Ratio) -> Ratio {
        amount * ratio::from_big(&self.scale)
    }
}

/// Per-edge flow, indexed like `Instance::edges`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowAssignment {
    pub values: Vec<Ratio>,
    /// Over-coverage assignments may exceed account exposures.
    pub over_coverage: bool,
}

impl FlowAssignment {
    pub fn zero(inst: &Instance) -> Self {
        Self { values: vec![ratio::zero(); inst.edges.len()], over_coverage: false }
    }

    pub fn from_values(values: Vec<Ratio>) -> Self {
        Self { values, over_coverage: false }
    }

    pub fn outflow(&self, inst: &Instance) -> Vec<Ratio> {
        let mut out = vec![ratio::zero(); inst.securities.len()];
        for (e, f) in inst.edges.iter().zip(&self.values) {
            out[e.security] += f;
        }
        out
    }

    pub fn inflow(&self, inst: &Instance) -> Vec<Ratio> {
        let mut inflow = vec![ratio::zero(); inst.accounts.len()];
        for (e, f) in inst.edges.iter().zip(&self.values) {
            inflow[e.account] += f;
        }
        inflow
    }

    pub fn total(&self) -> Ratio {
        self.values.iter().sum()
    }

    /// Checks non-negativity and the capacity constraints.
    pub fn check(&self, inst: &Instance) -> Result<(), InfeasibleFlow> {
        if self.values.len() != inst.edges.len() {
            return Err(InfeasibleFlow(format!(
                "{} flow values for {} edges",
                self.values.len(),
                inst.edges.len()
            )));
        }
        for (e, f) in inst.edges.iter().zip(&self.values) {
            let name = || {
                format!("{} -> {}", inst.securities[e.security].id, inst.accounts[e.account].id)
            };
            if f.is_negative() {
                return Err(InfeasibleFlow(format!("negative flow on {}", name())));
            }
            if let Some(cap) = &e.cap {
                if f > cap {
                    return Err(InfeasibleFlow(format!("flow on {} exceeds its cap", name())));
                }
            }
        }
        for (i, out) in self.outflow(inst).iter().enumerate() {
            if *out > inst.value(i) {
                return Err(InfeasibleFlow(format!(
                    "security `{}` pledges more than its value",
                    inst.securities[i].id
                )));
            }
        }
        if !self.over_coverage {
            for (j, inflow) in self.inflow(inst).iter().enumerate() {
                if *inflow > inst.exposure(j) {
                    return Err(InfeasibleFlow(format!(
                        "account `{}` receives more than its exposure",
                        inst.accounts[j].id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `s_j = e_j - inflow(j)` per account.
pub fn surplus_vector(inst: &Instance, f: &FlowAssignment) -> Result<Vec<Ratio>, InfeasibleFlow> {
    f.check(inst)?;
    Ok(f.inflow(inst).iter().enumerate().map(|(j, x)| inst.exposure(j) - x).collect())
}

/// `r_j = s_j / e_j` per account.
pub fn risk_vector(inst: &Instance, f: &FlowAssignment) -> Result<Vec<Ratio>, InfeasibleFlow> {
    let surplus = surplus_vector(inst, f)?;
    Ok(surplus.into_iter().enumerate().map(|(j, s)| s / inst.exposure(j)).collect())
}

/// `sum_j e_j r_j^2`, the weighted sum of squared risk ratios.
pub fn mwsr_objective(inst: &Instance, f: &FlowAssignment) -> Result<Ratio, InfeasibleFlow> {
    let risk = risk_vector(inst, f)?;
    Ok(objective_of_risk(inst, &risk))
}

pub(crate) fn objective_of_risk(inst: &Instance, risk: &[Ratio]) -> Ratio {
    risk.iter().enumerate().map(|(j, r)| inst.exposure(j) * r * r).sum()
}

/// One peeling step of the phase algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRecord {
    pub index: usize,
    pub lambda: Ratio,
    pub tight_securities: Vec<usize>,
    pub tight_accounts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverCoverage {
    pub flow: FlowAssignment,
    pub phases: Vec<PhaseRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceReport {
    pub flow: FlowAssignment,
    pub surplus: Vec<Ratio>,
    pub risk_ratio: Vec<Ratio>,
    pub phases: Vec<PhaseRecord>,
    pub objective: Ratio,
    pub over_coverage: Option<OverCoverage>,
    /// Flow per priority class, class 1 first.
    pub priority_profile: Option<Vec<Ratio>>,
    /// Feasibility queries (max-flow computations) spent locating lambdas.
    pub queries: usize,
}

impl BalanceReport {
    pub fn from_flow(
        inst: &Instance,
        flow: FlowAssignment,
        phases: Vec<PhaseRecord>,
        queries: usize,
    ) -> Result<Self, InfeasibleFlow> {
        let surplus = surplus_vector(inst, &flow)?;
        let risk_ratio: Vec<Ratio> =
            surplus.iter().enumerate().map(|(j, s)| s / inst.exposure(j)).collect();
        let objective = objective_of_risk(inst, &risk_ratio);
        Ok(Self {
            flow,
            surplus,
            risk_ratio,
            phases,
            objective,
            over_coverage: None,
            priority_profile: None,
            queries,
        })
    }

    pub fn lambdas(&self) -> Vec<Ratio> {
        self.phases.iter().map(|p| p.lambda.clone()).collect()
    }
}

/// Total flow per priority class for a flow on a prioritized instance.
pub fn priority_totals(inst: &Instance, f: &FlowAssignment) -> Vec<Ratio> {
    let mut totals = vec![ratio::zero(); inst.num_priorities() as usize];
    for (e, x) in inst.edges.iter().zip(&f.values) {
        if let Some(p) = e.priority {
            totals[p as usize - 1] += x;
        }
    }
    totals
}
