//! Versioned rule tables for the gates, loaded from JSON.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Severity;

pub const DEFAULT_POLICY_JSON: &str = include_str!("../../policy/default.json");
pub const SUPPORTED_POLICY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid policy JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("policy version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("rule `{id}` has an invalid pattern: {source}")]
    Pattern {
        id: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleScope {
    /// Instruction body and Script resources.
    All,
    /// Script resources only.
    Scripts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRule {
    pub id: String,
    pub severity: Severity,
    pub pattern: String,
    pub scope: RuleScope,
    /// Tool that authorizes the hit when listed in `allowed-tools`; `$1`
    /// takes the first capture group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorized_severity: Option<Severity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationPolicy {
    pub severity: Severity,
    pub base64_min_run: usize,
    pub entropy_window: usize,
    pub entropy_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationPolicy {
    pub python_calls: String,
    pub js_calls: String,
    pub shell_builtins: Vec<String>,
    pub shell_prefixes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub version: u32,
    pub static_rules: Vec<StaticRule>,
    pub credential_severity: Severity,
    pub obfuscation: ObfuscationPolicy,
    pub injection_lexicon: Vec<String>,
    /// Inclusive code point ranges treated as hidden control characters.
    pub hidden_unicode_ranges: Vec<(u32, u32)>,
    pub invocation: InvocationPolicy,
}

impl GatePolicy {
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let p: GatePolicy = serde_json::from_str(text)?;
        if p.version != SUPPORTED_POLICY_VERSION {
            return Err(PolicyError::UnsupportedVersion(p.version));
        }
        Ok(p)
    }
}

/// A policy with its patterns compiled.
#[derive(Debug, Clone)]
pub struct CompiledPolicy {
    pub policy: GatePolicy,
    pub(crate) static_rules: Vec<(StaticRule, Regex)>,
    pub(crate) base64_run: Regex,
    pub(crate) python_calls: Regex,
    pub(crate) js_calls: Regex,
}

static DEFAULT: LazyLock<CompiledPolicy> =
    LazyLock::new(|| CompiledPolicy::from_json(DEFAULT_POLICY_JSON).expect("bundled policy is valid"));

impl CompiledPolicy {
    pub fn compile(policy: GatePolicy) -> Result<Self, PolicyError> {
        let compile = |id: &str, pattern: &str| {
            Regex::new(pattern).map_err(|source| PolicyError::Pattern {
                id: id.to_string(),
                source,
            })
        };
        let static_rules = policy
            .static_rules
            .iter()
            .map(|r| Ok((r.clone(), compile(&r.id, &r.pattern)?)))
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let base64_run = compile(
            "obfuscation",
            &format!("[A-Za-z0-9+/]{{{},}}={{0,2}}", policy.obfuscation.base64_min_run.max(1)),
        )?;
        let python_calls = compile("python_calls", &policy.invocation.python_calls)?;
        let js_calls = compile("js_calls", &policy.invocation.js_calls)?;
        Ok(CompiledPolicy {
            policy,
            static_rules,
            base64_run,
            python_calls,
            js_calls,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        Self::compile(GatePolicy::from_json(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The policy bundled with the crate.
    pub fn builtin() -> &'static CompiledPolicy {
        &DEFAULT
    }

    pub fn is_hidden_char(&self, c: char) -> bool {
        let cp = c as u32;
        self.policy
            .hidden_unicode_ranges
            .iter()
            .any(|(lo, hi)| (*lo..=*hi).contains(&cp))
    }
}
