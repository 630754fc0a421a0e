//! Command-line front end: `balance`, `verify` and `export-qp`.
//!
//! Exit codes: 0 success, 1 verification failed, 2 bad input, 3 internal
//! invariant breach.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::{self, BalanceError};
use crate::model::{self, BalanceReport, FlowAssignment, Instance, InstanceError, PhaseRecord, RawInstance, Section};
use crate::priority;
use crate::ratio::{self, Ratio, ScaledDecimal};
use crate::verification::{self, Finding, Tolerance};

#[derive(Debug, Parser)]
#[command(name = "collateral-balance", version, about = "Ratio-balanced collateral allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the ratio-balanced maximum flow of an instance.
    Balance(BalanceArgs),
    /// Check a report against its instance.
    Verify(VerifyArgs),
    /// Write the quadratic-program form of the objective.
    ExportQp(ExportArgs),
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    pub input: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Spread leftover value over fully covered accounts.
    #[arg(long)]
    pub over_coverage: bool,
    /// Serve priority classes lexicographically before balancing.
    #[arg(long)]
    pub priorities: bool,
    /// Digits after the decimal point in decimal renderings.
    #[arg(long, default_value_t = 6)]
    pub precision: usize,
    /// Cross-check the risk vector by subset enumeration up to this many accounts.
    #[arg(long, default_value_t = 10)]
    pub max_oracle_size: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub instance: PathBuf,
    pub report: PathBuf,
    /// Slack for rounded reports, in input units and risk-ratio points.
    #[arg(long, default_value = "0")]
    pub tolerance: String,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    #[error("{path}{}: {source}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid { path: String, line: Option<usize>, source: InstanceError },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    BadReport { path: String, message: String },
    #[error("verification failed:\n{}", .0.join("\n"))]
    Verification(Vec<String>),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Internal(_) => 3,
            _ => 2,
        }
    }
}

impl From<BalanceError> for CliError {
    fn from(e: BalanceError) -> Self {
        match e {
            BalanceError::MissingPriorities => {
                CliError::Usage("--priorities given but the instance has no edge priorities".into())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write_output(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

/// Line (1-based) where the `index`-th object of the top-level array
/// `section` starts.
fn element_line(text: &str, section: Section, index: usize) -> Option<usize> {
    let key = format!("\"{}\"", section.key());
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut pending_key = false;
    let mut array_depth: Option<usize> = None;
    let mut seen = 0usize;
    let mut line = 1usize;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\n' {
            line += 1;
        }
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        match b {
            b'"' => {
                if depth == 1 && text[i..].starts_with(&key) {
                    pending_key = true;
                    i += key.len();
                    continue;
                }
                in_string = true;
            }
            b'[' => {
                depth += 1;
                if pending_key {
                    array_depth = Some(depth);
                    pending_key = false;
                }
            }
            b'{' => {
                if array_depth == Some(depth) {
                    if seen == index {
                        return Some(line);
                    }
                    seen += 1;
                }
                depth += 1;
            }
            b']' | b'}' => {
                if array_depth == Some(depth) && b == b']' {
                    array_depth = None;
                }
                depth = depth.saturating_sub(1);
            }
            b',' => pending_key = false,
            _ => {}
        }
        i += 1;
    }
    None
}

/// Reads and validates an instance file, reporting removal warnings.
pub fn load_instance(path: &Path, stderr: &mut dyn Write) -> Result<Instance, CliError> {
    let text = read(path)?;
    let shown = path.display().to_string();
    let raw: RawInstance = serde_json::from_str(&text).map_err(|e| CliError::Syntax {
        path: shown.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let validated = model::validate_instance(&raw).map_err(|source| CliError::Invalid {
        path: shown.clone(),
        line: source.anchor().and_then(|(s, i)| element_line(&text, s, i)),
        source,
    })?;
    for w in &validated.warnings {
        let _ = writeln!(stderr, "warning: {shown}: {w}");
    }
    Ok(validated.instance)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumDen {
    pub num: String,
    pub den: String,
}

impl NumDen {
    fn of(r: &Ratio) -> Self {
        Self { num: r.numer().to_string(), den: r.denom().to_string() }
    }

    fn to_ratio(&self) -> Option<Ratio> {
        let num: BigInt = self.num.trim().parse().ok()?;
        let den: BigInt = self.den.trim().parse().ok()?;
        (den != BigInt::from(0)).then(|| Ratio::new(num, den))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exact {
    pub num: String,
    pub den: String,
    pub decimal: String,
}

impl Exact {
    fn of(r: &Ratio, precision: usize) -> Self {
        Self { num: r.numer().to_string(), den: r.denom().to_string(), decimal: ratio::to_decimal(r, precision) }
    }

    fn to_ratio(&self) -> Option<Ratio> {
        NumDen { num: self.num.clone(), den: self.den.clone() }.to_ratio()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub security: String,
    pub account: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<NumDen>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountEntry {
    pub id: String,
    pub surplus: Exact,
    pub risk_ratio: Exact,
    pub secured_fraction: Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub k: usize,
    pub lambda: Exact,
    pub tight_securities: Vec<String>,
    pub tight_accounts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverCoverageEntry {
    pub flow: Vec<FlowEntry>,
    pub phases: Vec<PhaseEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityEntry {
    pub priority: u32,
    pub total: Exact,
}

/// The JSON report. Amounts are in input units; `scale` is the power of ten
/// the inputs were multiplied by internally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<String>,
    pub flow: Vec<FlowEntry>,
    #[serde(default)]
    pub accounts: Vec<AccountEntry>,
    #[serde(default)]
    pub phases: Vec<PhaseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Exact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub over_coverage: Option<OverCoverageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_profile: Option<Vec<PriorityEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<usize>,
}

fn flow_entries(inst: &Instance, f: &FlowAssignment, precision: usize) -> Vec<FlowEntry> {
    inst.edges
        .iter()
        .zip(&f.values)
        .map(|(e, x)| {
            let x = inst.unscale(x);
            FlowEntry {
                security: inst.securities[e.security].id.clone(),
                account: inst.accounts[e.account].id.clone(),
                value: Some(NumDen::of(&x)),
                decimal: Some(ratio::to_decimal(&x, precision)),
            }
        })
        .collect()
}

fn phase_entries(inst: &Instance, phases: &[PhaseRecord], precision: usize) -> Vec<PhaseEntry> {
    phases
        .iter()
        .map(|p| PhaseEntry {
            k: p.index,
            lambda: Exact::of(&p.lambda, precision),
            tight_securities: p.tight_securities.iter().map(|&i| inst.securities[i].id.clone()).collect(),
            tight_accounts: p.tight_accounts.iter().map(|&j| inst.accounts[j].id.clone()).collect(),
        })
        .collect()
}

pub fn report_file(inst: &Instance, report: &BalanceReport, precision: usize) -> ReportFile {
    let accounts = inst
        .accounts
        .iter()
        .enumerate()
        .map(|(j, a)| AccountEntry {
            id: a.id.clone(),
            surplus: Exact::of(&inst.unscale(&report.surplus[j]), precision),
            risk_ratio: Exact::of(&report.risk_ratio[j], precision),
            secured_fraction: Exact::of(&(ratio::one() - &report.risk_ratio[j]), precision),
        })
        .collect();
    ReportFile {
        scale: Some(inst.scale.to_string()),
        flow: flow_entries(inst, &report.flow, precision),
        accounts,
        phases: phase_entries(inst, &report.phases, precision),
        objective: Some(Exact::of(&inst.unscale(&report.objective), precision)),
        over_coverage: report.over_coverage.as_ref().map(|oc| OverCoverageEntry {
            flow: flow_entries(inst, &oc.flow, precision),
            phases: phase_entries(inst, &oc.phases, precision),
        }),
        priority_profile: report.priority_profile.as_ref().map(|profile| {
            profile
                .iter()
                .enumerate()
                .map(|(p, total)| PriorityEntry {
                    priority: p as u32 + 1,
                    total: Exact::of(&inst.unscale(total), precision),
                })
                .collect()
        }),
        queries: Some(report.queries),
    }
}

pub fn cmd_balance(args: &BalanceArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    if args.over_coverage && args.priorities {
        return Err(CliError::Usage("--over-coverage cannot be combined with --priorities".into()));
    }
    let inst = load_instance(&args.input, stderr)?;
    let report = if args.priorities {
        priority::balance_with_priorities(&inst)?
    } else {
        if inst.has_priorities() {
            let _ = writeln!(stderr, "warning: edge priorities ignored without --priorities");
        }
        let mut report = balancer::phase_decompose(&inst)?;
        if args.over_coverage {
            report = balancer::over_coverage_pass(&inst, &report)?;
        }
        report
    };

    if !args.priorities && inst.accounts.len() <= args.max_oracle_size {
        let mut plain = inst.clone();
        for e in &mut plain.edges {
            e.priority = None;
        }
        let oracle = verification::oracle_risk_vector(&plain, args.max_oracle_size)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        if oracle != report.risk_ratio {
            return Err(CliError::Internal("risk vector disagrees with the subset oracle".into()));
        }
    }

    let mut text = serde_json::to_string_pretty(&report_file(&inst, &report, args.precision))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_output(args.out.as_deref(), &text, stdout)
}

fn bad_report(path: &Path, message: impl Into<String>) -> CliError {
    CliError::BadReport { path: path.display().to_string(), message: message.into() }
}

/// Reads the base flow of a report into instance units.
fn report_flow(inst: &Instance, report: &ReportFile, path: &Path) -> Result<FlowAssignment, CliError> {
    let index: HashMap<(&str, &str), usize> = inst
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| ((inst.securities[e.security].id.as_str(), inst.accounts[e.account].id.as_str()), k))
        .collect();
    let mut values = vec![None; inst.edges.len()];
    for entry in &report.flow {
        let k = *index
            .get(&(entry.security.as_str(), entry.account.as_str()))
            .ok_or_else(|| bad_report(path, format!("unknown edge {} -> {}", entry.security, entry.account)))?;
        let value = match (&entry.value, &entry.decimal) {
            (Some(nd), _) => nd.to_ratio(),
            (None, Some(d)) => ScaledDecimal::parse(d).ok().map(|d| d.to_ratio()),
            (None, None) => None,
        }
        .ok_or_else(|| bad_report(path, format!("unreadable flow on {} -> {}", entry.security, entry.account)))?;
        if values[k].replace(inst.rescale(&value)).is_some() {
            return Err(bad_report(path, format!("edge {} -> {} listed twice", entry.security, entry.account)));
        }
    }
    Ok(FlowAssignment::from_values(values.into_iter().map(|v| v.unwrap_or_else(ratio::zero)).collect()))
}

pub fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let inst = load_instance(&args.instance, stderr)?;
    let text = read(&args.report)?;
    let report: ReportFile =
        serde_json::from_str(&text).map_err(|e| bad_report(&args.report, e.to_string()))?;
    let tau = ScaledDecimal::parse(&args.tolerance)
        .map_err(|e| CliError::Usage(format!("--tolerance: {e}")))?
        .to_ratio();
    if tau < ratio::zero() {
        return Err(CliError::Usage("--tolerance must be non-negative".into()));
    }
    let tol = Tolerance { amount: inst.rescale(&tau), ratio: tau.clone() };
    let flow = report_flow(&inst, &report, &args.report)?;

    let mut problems: Vec<String> = Vec::new();
    if report.priority_profile.is_some() {
        // Balance is only required among lexicographically optimal flows,
        // which need not have maximum value.
        let mut findings: Vec<Finding> = verification::audit_flow(&inst, &flow, &tol)
            .into_iter()
            .filter(|f| matches!(f, Finding::Infeasible(_)))
            .collect();
        if findings.is_empty() {
            let violations = verification::check_ratio_balance_admissible(&inst, &flow)?;
            findings.extend(violations.into_iter().map(Finding::Unbalanced));
            let lex = priority::lex_optimal_profile(&inst)?;
            if model::priority_totals(&inst, &flow) != lex.profile {
                problems.push("priority profile is not lexicographically optimal".into());
            }
        }
        problems.splice(0..0, findings.iter().map(|f| f.describe(&inst)));
    } else {
        problems.extend(verification::audit_flow(&inst, &flow, &tol).iter().map(|f| f.describe(&inst)));
    }

    if let Some(claimed) = &report.objective {
        let claimed = claimed
            .to_ratio()
            .ok_or_else(|| bad_report(&args.report, "unreadable objective"))?;
        let inflow = flow.inflow(&inst);
        let actual: Ratio = inflow
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let e = inst.exposure(j);
                let r = (&e - x) / &e;
                e * &r * r
            })
            .sum();
        let actual = inst.unscale(&actual);
        let diff = &actual - &claimed;
        if diff.abs() > tau {
            problems.push(format!(
                "objective: report says {}, flow gives {}",
                ratio::to_decimal(&claimed, 9),
                ratio::to_decimal(&actual, 9)
            ));
        }
    }

    if problems.is_empty() {
        let _ = writeln!(stdout, "ok: {} edges checked", inst.edges.len());
        Ok(())
    } else {
        Err(CliError::Verification(problems))
    }
}

pub fn cmd_export_qp(args: &ExportArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let inst = load_instance(&args.input, stderr)?;
    let mut text = verification::qp_standard_form(&inst).to_text();
    text.push_str(&format!("scale 1 1\n{}\n", inst.scale));
    write_output(args.out.as_deref(), &text, stdout)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Balance(args) => cmd_balance(args, stdout, stderr),
        Command::Verify(args) => cmd_verify(args, stdout, stderr),
        Command::ExportQp(args) => cmd_export_qp(args, stdout, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
