//! G4: tool invocations in scripts against the `allowed-tools` manifest.
//!
//! Extraction is lexical and under-approximate: shell command words, and
//! the first argument of subprocess-style calls in Python and JavaScript.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::policy::CompiledPolicy;
use super::{Gate, GateFinding, GateReport, Severity};
use crate::skillmd::{ResourceKind, SkillArtifact};
use crate::text::line_col;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: String,
    /// `path:line`.
    pub location: String,
}

fn basename(word: &str) -> &str {
    word.rsplit(['/', '\\']).next().unwrap_or(word)
}

fn is_shell(path: &str, text: &str) -> bool {
    path.ends_with(".sh")
        || path.ends_with(".bash")
        || text
            .lines()
            .next()
            .is_some_and(|l| l.starts_with("#!") && (l.contains("sh") && !l.contains("python") && !l.contains("node")))
}

fn shell_functions(text: &str) -> BTreeSet<String> {
    text.lines()
        .filter_map(|l| {
            let t = l.trim().strip_prefix("function ").unwrap_or(l.trim());
            let name = t.split("()").next()?;
            (t.contains("()") && !name.is_empty() && name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-'))
                .then(|| name.trim().to_string())
        })
        .collect()
}

static MASKED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\$\{[^}]*\}|'[^']*'").unwrap());

fn shell_commands(text: &str, policy: &CompiledPolicy) -> Vec<(usize, String)> {
    let inv = &policy.policy.invocation;
    // Parameter expansions and single-quoted strings never name a command.
    let text = MASKED.replace_all(text, "$$V");
    let text = text.as_ref();
    let functions = shell_functions(text);
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line = line.split(" #").next().unwrap_or(line);
        let mut segments = vec![line.to_string()];
        for sep in ["$(", "`", "&&", "||", "|", ";", "(", ")", "{", "}"] {
            segments = segments
                .iter()
                .flat_map(|s| s.split(sep).map(str::to_string).collect::<Vec<_>>())
                .collect();
        }
        for seg in segments {
            let mut words = seg.split_whitespace().peekable();
            while let Some(w) = words.peek() {
                let is_assign = w.contains('=') && !w.starts_with('=') && !w.starts_with('-');
                if is_assign || inv.shell_prefixes.iter().any(|p| p == w) || w.starts_with('-') {
                    words.next();
                } else {
                    break;
                }
            }
            let Some(word) = words.next() else { continue };
            if word.starts_with(['$', '"', '\'', '>', '<', '&', '!', '[', '#']) || word.ends_with(')') {
                continue;
            }
            let tool = basename(word);
            let plain = tool
                .chars()
                .all(|c| c.is_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'));
            if !plain || tool.is_empty() || tool.starts_with('.') {
                continue;
            }
            if inv.shell_builtins.iter().any(|b| b == tool) || functions.contains(tool) {
                continue;
            }
            out.push((n + 1, tool.to_string()));
        }
    }
    out
}

/// Tools each Script resource invokes, in file then line order.
pub fn extract_tool_invocations(artifact: &SkillArtifact, policy: &CompiledPolicy) -> Vec<ToolInvocation> {
    let mut out = Vec::new();
    for r in artifact.resources.iter().filter(|r| r.kind == ResourceKind::Script) {
        let Some(text) = r.text() else { continue };
        let mut found: Vec<(usize, String)> = Vec::new();
        if is_shell(&r.path, text) {
            found.extend(shell_commands(text, policy));
        }
        for re in [&policy.python_calls, &policy.js_calls] {
            for c in re.captures_iter(text) {
                let m = c.get(1).expect("tool group");
                found.push((line_col(text, m.start()).0, basename(m.as_str()).to_string()));
            }
        }
        found.sort();
        found.dedup();
        out.extend(found.into_iter().map(|(line, tool)| ToolInvocation {
            tool,
            location: format!("{}:{line}", r.path),
        }));
    }
    out
}

/// Every extracted tool must be declared; declared but unused tools warn.
pub fn g4_permission_validate(artifact: &SkillArtifact, policy: &CompiledPolicy) -> GateReport {
    let invocations = extract_tool_invocations(artifact, policy);
    let mut first_use: BTreeMap<String, String> = BTreeMap::new();
    for inv in &invocations {
        first_use
            .entry(inv.tool.clone())
            .or_insert_with(|| inv.location.clone());
    }
    let mut findings = Vec::new();
    match &artifact.frontmatter.allowed_tools {
        None => {
            if !first_use.is_empty() {
                let tools: Vec<&str> = first_use.keys().map(String::as_str).collect();
                findings.push(GateFinding::new(
                    "missing-manifest",
                    Severity::Critical,
                    "frontmatter.allowed-tools",
                    format!(
                        "scripts invoke {} but no allowed-tools manifest is declared",
                        tools.join(", ")
                    ),
                ));
            }
        }
        Some(allowed) => {
            let mut seen = BTreeSet::new();
            for t in allowed {
                if t.trim().is_empty() || !seen.insert(t.as_str()) {
                    findings.push(GateFinding::new(
                        "invalid-manifest",
                        Severity::Warn,
                        "frontmatter.allowed-tools",
                        format!("entry \"{t}\" is empty or repeated"),
                    ));
                }
            }
            for (tool, loc) in &first_use {
                if !seen.contains(tool.as_str()) {
                    findings.push(GateFinding::new(
                        "undeclared-tool",
                        Severity::Critical,
                        loc.clone(),
                        tool.clone(),
                    ));
                }
            }
            for t in seen {
                if !t.trim().is_empty() && !first_use.contains_key(t) {
                    findings.push(GateFinding::new(
                        "over-grant",
                        Severity::Warn,
                        "frontmatter.allowed-tools",
                        format!("`{t}` is declared but no script invokes it"),
                    ));
                }
            }
        }
    }
    GateReport::from_findings(Gate::G4, findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::GateVerdict;
    use crate::skillmd::{Frontmatter, ResourceRef};

    fn artifact(scripts: &[(&str, &str)], tools: Option<&[&str]>) -> SkillArtifact {
        SkillArtifact {
            frontmatter: Frontmatter {
                name: "t".into(),
                description: "d".into(),
                version: "1.0.0".into(),
                trigger: vec!["t".into()],
                dependencies: vec![],
                allowed_tools: tools.map(|t| t.iter().map(|s| s.to_string()).collect()),
                success_criteria: None,
            },
            instructions: String::new(),
            resources: scripts
                .iter()
                .map(|(p, t)| ResourceRef::new(*p, t.as_bytes().to_vec()).unwrap())
                .collect(),
        }
    }

    fn tools(scripts: &[(&str, &str)]) -> Vec<String> {
        let mut t: Vec<String> = extract_tool_invocations(&artifact(scripts, None), CompiledPolicy::builtin())
            .into_iter()
            .map(|i| i.tool)
            .collect();
        t.sort();
        t.dedup();
        t
    }

    #[test]
    fn extraction_rule_table() {
        assert_eq!(
            tools(&[(
                "scripts/run.sh",
                "#!/bin/bash\nset -e\nOUT=x sudo /usr/bin/ffmpeg -i a.mp4 | tee log\nif [ -f x ]; then echo hi; fi\nhelper() { grep a b; }\nhelper\nn=$(wc -l < f)\nf=\"${1:-media/scene.py}\"\ngrep -E 'a|b;c' x\n"
            )]),
            ["ffmpeg", "grep", "tee", "wc"]
        );
        assert_eq!(
            tools(&[(
                "scripts/a.py",
                "import subprocess, os\nsubprocess.run([\"ffmpeg\", \"-y\"])\nos.system(f\"convert {x}\")\nsubprocess.Popen('latex doc.tex', shell=True)\n"
            )]),
            ["convert", "ffmpeg", "latex"]
        );
        assert_eq!(
            tools(&[("scripts/a.js", "execSync('git status')\nspawn(\"npx\", [])\n")]),
            ["git", "npx"]
        );
    }

    #[test]
    fn manifest_coverage() {
        let p = CompiledPolicy::builtin();
        let script = [("scripts/a.py", "subprocess.run([\"ffmpeg\"])\n")];
        let r = g4_permission_validate(&artifact(&script, Some(&["ffmpeg"])), p);
        assert_eq!((r.verdict, r.findings.len()), (GateVerdict::Pass, 0));

        let curl = [("scripts/a.sh", "curl -sO https://example.com/x\n")];
        let r = g4_permission_validate(&artifact(&curl, Some(&["ffmpeg"])), p);
        assert_eq!(r.verdict, GateVerdict::Fail);
        let undeclared = r.findings.iter().find(|f| f.rule_id == "undeclared-tool").unwrap();
        assert_eq!(undeclared.evidence, "curl");
        assert!(r
            .findings
            .iter()
            .any(|f| f.rule_id == "over-grant" && f.severity == Severity::Warn));

        let r = g4_permission_validate(&artifact(&curl, None), p);
        assert_eq!(r.findings[0].rule_id, "missing-manifest");

        let r = g4_permission_validate(&artifact(&[], None), p);
        assert_eq!((r.verdict, r.findings.len()), (GateVerdict::Pass, 0));
    }
}
