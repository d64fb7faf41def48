//! Hardcoded-literal patterns shared by the asset sanitizer, the G1 credential
//! rules and the generalizability criterion.
//!
//! Keeping one pattern set means sanitized output is, by construction, clean
//! for the gate that later re-scans it.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecretRule {
    /// Quoted string starting with a key-like prefix (`sk-`, `ghp_`, `AKIA`, `bearer `).
    KeyPrefix,
    /// Quoted value assigned to a name containing key/token/secret/password.
    SecretAssignment,
    /// URL with `user:password@` userinfo.
    CredentialUrl,
    /// Absolute filesystem directory prefix.
    AbsolutePath,
}

impl SecretRule {
    pub fn id(self) -> &'static str {
        match self {
            SecretRule::KeyPrefix => "key-prefix",
            SecretRule::SecretAssignment => "secret-assignment",
            SecretRule::CredentialUrl => "credential-url",
            SecretRule::AbsolutePath => "absolute-path",
        }
    }

    pub fn is_credential(self) -> bool {
        !matches!(self, SecretRule::AbsolutePath)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretMatch {
    pub rule: SecretRule,
    /// Byte span that gets replaced.
    pub span: Range<usize>,
    pub placeholder: &'static str,
}

pub const API_KEY: &str = "{{API_KEY}}";
pub const SECRET: &str = "{{SECRET}}";
pub const ABS_PATH: &str = "{{ABS_PATH}}";
pub const CREDENTIALS: &str = "{{CREDENTIALS}}";

const KEY_PREFIX: &str = r"(?:sk-|ghp_|AKIA|[Bb][Ee][Aa][Rr][Ee][Rr] )";

static KEY_PREFIX_DQ: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r#""({KEY_PREFIX}[^"\n]+)""#)).unwrap());
static KEY_PREFIX_SQ: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r#"'({KEY_PREFIX}[^'\n]+)'"#)).unwrap());

const SECRET_NAME: &str = r"([A-Za-z_][A-Za-z0-9_.\-]*)";
const ASSIGN: &str = r#"["']?\s*(?:=>|:=|=|:)\s*"#;

static ASSIGN_DQ: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r#"{SECRET_NAME}{ASSIGN}"([^"\n]*)""#)).unwrap());
static ASSIGN_SQ: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r#"{SECRET_NAME}{ASSIGN}'([^'\n]*)'"#)).unwrap());

static CREDENTIAL_URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\b[A-Za-z][A-Za-z0-9+.\-]*://([^\s/:@"'{}]+:[^\s/@"'{}]+)@"#).unwrap());

static POSIX_PATH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?m)(?:^|[\s"'=(,:\[])(/(?:[A-Za-z0-9._\-~]+/)+)"#).unwrap());
static WINDOWS_PATH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?m)(?:^|[\s"'=(,\[])([A-Za-z]:[\\/](?:[A-Za-z0-9._\-~]+[\\/])+)"#).unwrap());

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\{\{[A-Z_]+\}\}$").unwrap());

/// Portable system locations that are left alone.
const SYSTEM_DIRS: &[&str] = &[
    "/dev/",
    "/proc/",
    "/sys/",
    "/bin/",
    "/usr/bin/",
    "/usr/local/bin/",
    "/tmp/",
];

fn secret_placeholder(name: &str) -> Option<&'static str> {
    let lower = name.to_ascii_lowercase();
    if lower.contains("password") || lower.contains("secret") {
        Some(SECRET)
    } else if lower.contains("key") || lower.contains("token") {
        Some(API_KEY)
    } else {
        None
    }
}

fn raw_matches(text: &str) -> Vec<SecretMatch> {
    let mut out = Vec::new();
    for re in [&*KEY_PREFIX_DQ, &*KEY_PREFIX_SQ] {
        for c in re.captures_iter(text) {
            let m = c.get(1).unwrap();
            out.push(SecretMatch {
                rule: SecretRule::KeyPrefix,
                span: m.range(),
                placeholder: API_KEY,
            });
        }
    }
    for re in [&*ASSIGN_DQ, &*ASSIGN_SQ] {
        for c in re.captures_iter(text) {
            let name = c.get(1).unwrap().as_str();
            let value = c.get(2).unwrap();
            let Some(placeholder) = secret_placeholder(name) else {
                continue;
            };
            if value.as_str().is_empty() || PLACEHOLDER.is_match(value.as_str()) {
                continue;
            }
            out.push(SecretMatch {
                rule: SecretRule::SecretAssignment,
                span: value.range(),
                placeholder,
            });
        }
    }
    for c in CREDENTIAL_URL.captures_iter(text) {
        out.push(SecretMatch {
            rule: SecretRule::CredentialUrl,
            span: c.get(1).unwrap().range(),
            placeholder: CREDENTIALS,
        });
    }
    for re in [&*POSIX_PATH, &*WINDOWS_PATH] {
        for c in re.captures_iter(text) {
            let dir = c.get(1).unwrap();
            if SYSTEM_DIRS.iter().any(|s| dir.as_str().starts_with(s)) {
                continue;
            }
            // Keep the trailing separator so the file name stays attached.
            out.push(SecretMatch {
                rule: SecretRule::AbsolutePath,
                span: dir.start()..dir.end() - 1,
                placeholder: ABS_PATH,
            });
        }
    }
    out
}

/// All non-overlapping matches, in text order.
///
/// Overlaps resolve to the earliest start, then the longest span, then the
/// rule order of [`SecretRule`].
pub fn find_matches(text: &str) -> Vec<SecretMatch> {
    let mut all = raw_matches(text);
    all.sort_by(|a, b| {
        a.span
            .start
            .cmp(&b.span.start)
            .then(b.span.end.cmp(&a.span.end))
            .then(a.rule.cmp(&b.rule))
    });
    let mut out: Vec<SecretMatch> = Vec::with_capacity(all.len());
    for m in all {
        if out.last().is_some_and(|prev| m.span.start < prev.span.end) {
            continue;
        }
        out.push(m);
    }
    out
}

pub fn find_credentials(text: &str) -> Vec<SecretMatch> {
    find_matches(text)
        .into_iter()
        .filter(|m| m.rule.is_credential())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(text: &str) -> Vec<SecretRule> {
        find_matches(text).into_iter().map(|m| m.rule).collect()
    }

    #[test]
    fn assignment_and_prefix_on_same_value_count_once() {
        let text = r#"api_key = "sk-abc123XYZsecretsecret""#;
        let m = find_matches(text);
        assert_eq!(m.len(), 1);
        assert_eq!(&text[m[0].span.clone()], "sk-abc123XYZsecretsecret");
    }

    #[test]
    fn recognises_each_rule() {
        assert_eq!(rules(r#"h = 'ghp_0123456789abcdef'"#), vec![SecretRule::KeyPrefix]);
        assert_eq!(rules(r#"{"password": "hunter2"}"#), vec![SecretRule::SecretAssignment]);
        assert_eq!(
            rules("git clone https://bob:pw@example.com/r.git"),
            vec![SecretRule::CredentialUrl]
        );
        assert_eq!(rules("open('/home/alice/data/x.csv')"), vec![SecretRule::AbsolutePath]);
        assert_eq!(rules(r"path = C:\Users\bob\file.txt"), vec![SecretRule::AbsolutePath]);
    }

    #[test]
    fn ignores_benign_text() {
        assert!(rules("if token == \"abc\":").is_empty());
        assert!(rules("see https://example.com/docs/page").is_empty());
        assert!(rules("#!/usr/bin/env python3").is_empty());
        assert!(rules("cmd > /dev/null").is_empty());
        assert!(rules("ratio = 10/2/5").is_empty());
        assert!(rules(r#"api_key = "{{API_KEY}}""#).is_empty());
        assert!(rules(r#"name = "value""#).is_empty());
    }
}
