//! G1: pattern scan of the instruction body and bundled scripts.

use std::collections::{BTreeSet, HashMap};

use super::policy::{CompiledPolicy, RuleScope};
use super::{excerpt, Gate, GateFinding, GateReport};
use crate::secrets;
use crate::skillmd::{ResourceKind, SkillArtifact};
use crate::text::line_col;

pub(crate) struct Target<'a> {
    pub name: &'a str,
    pub text: &'a str,
    pub is_script: bool,
}

pub(crate) fn targets(artifact: &SkillArtifact) -> Vec<Target<'_>> {
    let mut out = vec![Target {
        name: "SKILL.md",
        text: &artifact.instructions,
        is_script: false,
    }];
    for r in &artifact.resources {
        if r.kind != ResourceKind::Script {
            continue;
        }
        if let Some(text) = r.text() {
            out.push(Target {
                name: &r.path,
                text,
                is_script: true,
            });
        }
    }
    out
}

fn line_at(text: &str, offset: usize) -> &str {
    let start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let end = text[offset..].find('\n').map_or(text.len(), |i| offset + i);
    &text[start..end]
}

fn location(target: &Target, offset: usize) -> String {
    let (line, col) = line_col(target.text, offset);
    format!("{}:{line}:{col}", target.name)
}

/// Highest Shannon entropy, in bits per char, over every `window`-char
/// slice of `chars`. Counts are updated incrementally as the window slides.
pub fn max_window_entropy(chars: &[char], window: usize) -> Option<f64> {
    if window == 0 || chars.len() < window {
        return None;
    }
    let n = window as f64;
    let mut counts: HashMap<char, usize> = HashMap::new();
    // sum of c*log2(c) over the window
    let mut s = 0.0;
    let clog = |c: usize| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() };
    let bump = |counts: &mut HashMap<char, usize>, s: &mut f64, ch: char, up: bool| {
        let c = counts.entry(ch).or_insert(0);
        *s -= clog(*c);
        if up {
            *c += 1;
        } else {
            *c -= 1;
        }
        *s += clog(*c);
    };
    for &ch in &chars[..window] {
        bump(&mut counts, &mut s, ch, true);
    }
    let mut best = n.log2() - s / n;
    for i in window..chars.len() {
        bump(&mut counts, &mut s, chars[i - window], false);
        bump(&mut counts, &mut s, chars[i], true);
        best = best.max(n.log2() - s / n);
    }
    Some(best.max(0.0))
}

fn obfuscation_findings(target: &Target, policy: &CompiledPolicy, out: &mut Vec<GateFinding>) {
    let ob = &policy.policy.obfuscation;
    let mut offset = 0;
    for line in target.text.split('\n') {
        let run = policy.base64_run.find(line);
        // Entropy windows are taken over whitespace-free stretches only.
        let mut best: Option<(f64, usize)> = None;
        let mut pos = 0;
        for word in line.split(char::is_whitespace) {
            let chars: Vec<char> = word.chars().collect();
            if let Some(h) = max_window_entropy(&chars, ob.entropy_window) {
                if best.is_none_or(|(b, _)| h > b) {
                    best = Some((h, pos));
                }
            }
            pos += word.len() + 1;
        }
        let high_entropy = best.filter(|(h, _)| *h > ob.entropy_threshold);
        if run.is_some() || high_entropy.is_some() {
            let at = run.map(|m| m.start()).or(high_entropy.map(|(_, p)| p)).unwrap_or(0);
            let measured = best.map(|(h, _)| h);
            let mut evidence = Vec::new();
            if let Some(m) = run {
                evidence.push(format!("base64-like run of {} chars", m.len()));
            }
            if let Some(h) = measured {
                evidence.push(format!(
                    "max {}-char window entropy {h:.3} bits/char",
                    ob.entropy_window
                ));
            }
            let mut f = GateFinding::new(
                "obfuscation",
                ob.severity,
                location(target, offset + at),
                evidence.join("; "),
            );
            f.metric = measured;
            out.push(f);
        }
        offset += line.len() + 1;
    }
}

/// Tool names captured by tool-gated rules (network clients), lowercased.
pub fn gated_tools(artifact: &SkillArtifact, policy: &CompiledPolicy) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for target in targets(artifact) {
        for (rule, re) in &policy.static_rules {
            let Some(tool) = rule.tool.as_deref() else { continue };
            if rule.scope == RuleScope::Scripts && !target.is_script {
                continue;
            }
            for caps in re.captures_iter(target.text) {
                out.insert(match tool {
                    "$1" => caps.get(1).map_or("", |g| g.as_str()).to_lowercase(),
                    other => other.to_lowercase(),
                });
            }
        }
    }
    out.remove("");
    out
}

/// Run every G1 rule over the body and Script resources.
pub fn g1_static_scan(artifact: &SkillArtifact, policy: &CompiledPolicy) -> GateReport {
    let allowed: Vec<String> = artifact
        .frontmatter
        .allowed_tools
        .iter()
        .flatten()
        .map(|t| t.to_lowercase())
        .collect();
    let mut findings = Vec::new();
    for target in targets(artifact) {
        for (rule, re) in &policy.static_rules {
            if rule.scope == RuleScope::Scripts && !target.is_script {
                continue;
            }
            for caps in re.captures_iter(target.text) {
                let m = caps.get(0).expect("whole match");
                let tool = rule.tool.as_deref().map(|t| match t {
                    "$1" => caps.get(1).map_or("", |g| g.as_str()).to_lowercase(),
                    other => other.to_lowercase(),
                });
                let authorized = tool.as_ref().is_some_and(|t| allowed.contains(t));
                let severity = match (authorized, rule.authorized_severity) {
                    (true, Some(s)) => s,
                    _ => rule.severity,
                };
                let start = caps.get(1).map_or(m.start(), |g| g.start());
                let mut evidence = excerpt(line_at(target.text, m.start()));
                if let Some(t) = &tool {
                    let state = if authorized { "declared" } else { "not declared" };
                    evidence = format!("{evidence} [tool `{t}` {state} in allowed-tools]");
                }
                findings.push(GateFinding::new(&rule.id, severity, location(&target, start), evidence));
            }
        }
        for m in secrets::find_credentials(target.text) {
            findings.push(GateFinding::new(
                "hardcoded-credential",
                policy.policy.credential_severity,
                location(&target, m.span.start),
                format!("{} literal", m.rule.id()),
            ));
        }
        obfuscation_findings(&target, policy, &mut findings);
    }
    GateReport::from_findings(Gate::G1, findings)
}
