//! The four verification gates, trust tiers and the corpus vulnerability
//! rate.
//!
//! - G1 static scan of the body and scripts against the policy rule table.
//! - G2 semantic checks: trigger alignment, hidden Unicode, injection
//!   phrases, undeclared imports, plus an optional external classifier.
//! - G3 sandboxed execution through a pluggable [`SandboxRunner`].
//! - G4 permission validation of extracted tool invocations against
//!   `allowed-tools`.

mod permissions;
mod policy;
mod sandbox;
mod semantic;
mod static_scan;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use permissions::{extract_tool_invocations, g4_permission_validate, ToolInvocation};
pub use policy::{CompiledPolicy, GatePolicy, InvocationPolicy, ObfuscationPolicy, PolicyError, RuleScope, StaticRule};
pub use sandbox::{
    g3_sandbox_execute, DryRunSandbox, ExternalSandbox, SandboxError, SandboxLimits, SandboxRunner, ScriptOutcome,
};
pub use semantic::{g2_semantic_check, SemanticClassifier};
pub use static_scan::{g1_static_scan, gated_tools, max_window_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gate {
    G1,
    G2,
    G3,
    G4,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::G1, Gate::G2, Gate::G3, Gate::G4];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateVerdict {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Warn,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateFinding {
    pub rule_id: String,
    pub severity: Severity,
    pub location: String,
    pub evidence: String,
    /// Measured quantity behind the finding, e.g. window entropy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
}

impl GateFinding {
    pub fn new(rule_id: &str, severity: Severity, location: impl Into<String>, evidence: impl Into<String>) -> Self {
        GateFinding {
            rule_id: rule_id.to_string(),
            severity,
            location: location.into(),
            evidence: evidence.into(),
            metric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub gate: Gate,
    pub verdict: GateVerdict,
    pub findings: Vec<GateFinding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl GateReport {
    /// Fail iff any finding is Critical, otherwise Pass.
    pub fn from_findings(gate: Gate, findings: Vec<GateFinding>) -> Self {
        let verdict = if findings.iter().any(|f| f.severity == Severity::Critical) {
            GateVerdict::Fail
        } else {
            GateVerdict::Pass
        };
        GateReport {
            gate,
            verdict,
            findings,
            notes: Vec::new(),
        }
    }

    pub fn skipped(gate: Gate, findings: Vec<GateFinding>, note: impl Into<String>) -> Self {
        let mut r = Self::from_findings(gate, findings);
        if r.verdict == GateVerdict::Pass {
            r.verdict = GateVerdict::Skipped;
        }
        r.notes.push(note.into());
        r
    }

    pub fn has_critical(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Critical)
    }

    pub fn rule_ids(&self) -> BTreeSet<&str> {
        self.findings.iter().map(|f| f.rule_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrustTier {
    T0,
    T1,
    T2,
    T3,
    T4,
}

impl TrustTier {
    pub fn from_level(level: usize) -> Self {
        match level {
            0 => TrustTier::T0,
            1 => TrustTier::T1,
            2 => TrustTier::T2,
            3 => TrustTier::T3,
            _ => TrustTier::T4,
        }
    }

    pub fn level(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("more than one report for gate {0:?}")]
    DuplicateGateReport(Gate),
    #[error("vulnerability rate needs a non-empty corpus")]
    EmptyCorpus,
    #[error("report for `{0}` is not a G1 report")]
    NotStaticReport(String),
}

/// Highest tier whose prerequisite gates all passed. Tier `n` requires
/// G1..Gn to be Pass; Skipped counts as not passed.
pub fn assign_trust_tier(reports: &[GateReport]) -> Result<TrustTier, GateError> {
    let mut seen = BTreeSet::new();
    for r in reports {
        if !seen.insert(r.gate) {
            return Err(GateError::DuplicateGateReport(r.gate));
        }
    }
    let passed = |g: Gate| reports.iter().any(|r| r.gate == g && r.verdict == GateVerdict::Pass);
    let level = Gate::ALL.iter().take_while(|g| passed(**g)).count();
    Ok(TrustTier::from_level(level))
}

/// Fraction of skills whose G1 report has at least one Critical finding.
pub fn vulnerability_rate(reports: &[(String, GateReport)]) -> Result<f64, GateError> {
    if reports.is_empty() {
        return Err(GateError::EmptyCorpus);
    }
    if let Some((id, _)) = reports.iter().find(|(_, r)| r.gate != Gate::G1) {
        return Err(GateError::NotStaticReport(id.clone()));
    }
    let flagged = reports.iter().filter(|(_, r)| r.has_critical()).count();
    Ok(flagged as f64 / reports.len() as f64)
}

pub(crate) fn excerpt(line: &str) -> String {
    let t = line.trim();
    if t.chars().count() > 120 {
        let cut: String = t.chars().take(117).collect();
        format!("{cut}...")
    } else {
        t.to_string()
    }
}
