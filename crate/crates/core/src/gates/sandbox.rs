//! G3: behavioural checks through a sandbox provider.
//!
//! Providers run each script with no network, a temporary-directory jail
//! and wall-clock and memory caps, and report a [`ScriptOutcome`]. The
//! built-in [`DryRunSandbox`] only inspects scripts, so its verdict is
//! Skipped. [`ExternalSandbox`] delegates to a command that prints an
//! outcome as JSON.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Gate, GateFinding, GateReport, Severity};
use crate::skillmd::{write_skill_into, ResourceKind, ResourceRef, SkillArtifact};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("script `{0}` exceeded the wall-clock limit")]
    SandboxTimeout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxLimits {
    pub wall_clock_ms: u64,
    pub memory_bytes: u64,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits {
            wall_clock_ms: 60_000,
            memory_bytes: 512 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptOutcome {
    pub script: String,
    /// `None` when the script was inspected but not run.
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub wall_ms: u64,
    #[serde(default)]
    pub peak_memory_bytes: u64,
    #[serde(default)]
    pub files_outside_jail: Vec<String>,
    #[serde(default)]
    pub network_attempts: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub trait SandboxRunner: Send + Sync {
    fn name(&self) -> &str;

    /// Dry-run providers inspect without executing.
    fn is_dry_run(&self) -> bool {
        false
    }

    fn run_script(
        &self,
        artifact: &SkillArtifact,
        script: &ResourceRef,
        limits: &SandboxLimits,
    ) -> Result<ScriptOutcome, SandboxError>;
}

fn interpreter_for(script: &ResourceRef) -> Option<String> {
    let text = script.text()?;
    if let Some(shebang) = text.lines().next().and_then(|l| l.strip_prefix("#!")) {
        let mut words = shebang.split_whitespace();
        let first = words.next()?;
        let prog = first.rsplit('/').next().unwrap_or(first);
        return Some(if prog == "env" {
            words.next()?.to_string()
        } else {
            prog.to_string()
        });
    }
    let ext = script.path.rsplit_once('.').map(|(_, e)| e)?;
    Some(
        match ext {
            "py" => "python3",
            "sh" | "bash" => "bash",
            "js" | "mjs" | "cjs" => "node",
            "rb" => "ruby",
            "pl" => "perl",
            _ => return None,
        }
        .to_string(),
    )
}

/// Read-only inspection; executes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct DryRunSandbox;

impl SandboxRunner for DryRunSandbox {
    fn name(&self) -> &str {
        "dry-run"
    }

    fn is_dry_run(&self) -> bool {
        true
    }

    fn run_script(
        &self,
        _: &SkillArtifact,
        script: &ResourceRef,
        _: &SandboxLimits,
    ) -> Result<ScriptOutcome, SandboxError> {
        let mut notes = Vec::new();
        match script.text() {
            None => notes.push("not valid UTF-8".to_string()),
            Some(text) => {
                let interp = interpreter_for(script).unwrap_or_else(|| "unknown".into());
                notes.push(format!("{} lines, interpreter {interp}", text.lines().count()));
            }
        }
        Ok(ScriptOutcome {
            script: script.path.clone(),
            exit_code: None,
            notes,
            ..ScriptOutcome::default()
        })
    }
}

/// Runs `command... <skill_dir> <script>` and parses a [`ScriptOutcome`]
/// from its stdout. The limits are passed as `SKILLSMITH_WALL_MS` and
/// `SKILLSMITH_MEM_BYTES`; the wall clock is also enforced here.
#[derive(Debug, Clone)]
pub struct ExternalSandbox {
    pub command: Vec<String>,
}

impl ExternalSandbox {
    pub fn new(command: Vec<String>) -> Result<Self, SandboxError> {
        if command.is_empty() {
            return Err(SandboxError::SandboxUnavailable("empty sandbox command".into()));
        }
        Ok(ExternalSandbox { command })
    }

    fn stage(&self, artifact: &SkillArtifact) -> Result<(tempfile::TempDir, PathBuf), SandboxError> {
        let tmp = tempfile::tempdir().map_err(|e| SandboxError::SandboxUnavailable(e.to_string()))?;
        let dir = tmp.path().join(&artifact.frontmatter.name);
        write_skill_into(artifact, &dir).map_err(|e| SandboxError::SandboxUnavailable(e.to_string()))?;
        Ok((tmp, dir))
    }

    fn invoke(&self, dir: &Path, script: &str, limits: &SandboxLimits) -> Result<ScriptOutcome, SandboxError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(dir)
            .arg(script)
            .env("SKILLSMITH_WALL_MS", limits.wall_clock_ms.to_string())
            .env("SKILLSMITH_MEM_BYTES", limits.memory_bytes.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SandboxError::SandboxUnavailable(format!("{}: {e}", self.command[0])))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let deadline = Instant::now() + Duration::from_millis(limits.wall_clock_ms);
        loop {
            match child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SandboxError::SandboxTimeout(script.to_string()));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(SandboxError::SandboxUnavailable(e.to_string())),
            }
        }
        let out = reader
            .join()
            .map_err(|_| SandboxError::SandboxUnavailable("stdout reader panicked".into()))?
            .map_err(|e| SandboxError::SandboxUnavailable(e.to_string()))?;
        let mut outcome: ScriptOutcome = serde_json::from_str(out.trim())
            .map_err(|e| SandboxError::SandboxUnavailable(format!("bad outcome JSON: {e}")))?;
        if outcome.script.is_empty() {
            outcome.script = script.to_string();
        }
        Ok(outcome)
    }
}

impl SandboxRunner for ExternalSandbox {
    fn name(&self) -> &str {
        &self.command[0]
    }

    fn run_script(
        &self,
        artifact: &SkillArtifact,
        script: &ResourceRef,
        limits: &SandboxLimits,
    ) -> Result<ScriptOutcome, SandboxError> {
        let (_tmp, dir) = self.stage(artifact)?;
        self.invoke(&dir, &script.path, limits)
    }
}

fn judge(outcome: &ScriptOutcome, limits: &SandboxLimits) -> Vec<GateFinding> {
    let s = &outcome.script;
    let mut out = Vec::new();
    for f in &outcome.files_outside_jail {
        out.push(GateFinding::new(
            "fs-escape",
            Severity::Critical,
            s.clone(),
            format!("touched {f}"),
        ));
    }
    for n in &outcome.network_attempts {
        out.push(GateFinding::new(
            "network-attempt",
            Severity::Critical,
            s.clone(),
            n.clone(),
        ));
    }
    if let Some(code) = outcome.exit_code.filter(|c| *c != 0) {
        out.push(GateFinding::new(
            "script-failed",
            Severity::Critical,
            s.clone(),
            format!("exit status {code}"),
        ));
    }
    if outcome.peak_memory_bytes > limits.memory_bytes || outcome.wall_ms > limits.wall_clock_ms {
        out.push(GateFinding::new(
            "resource-cap",
            Severity::Critical,
            s.clone(),
            format!("peak {} bytes in {} ms", outcome.peak_memory_bytes, outcome.wall_ms),
        ));
    }
    out
}

/// Execute every Script resource through `sandbox`.
pub fn g3_sandbox_execute(
    artifact: &SkillArtifact,
    sandbox: Option<&dyn SandboxRunner>,
    limits: &SandboxLimits,
) -> Result<GateReport, SandboxError> {
    let scripts: Vec<_> = artifact
        .resources
        .iter()
        .filter(|r| r.kind == ResourceKind::Script)
        .collect();
    if scripts.is_empty() {
        return Ok(GateReport::skipped(Gate::G3, vec![], "no scripts to execute"));
    }
    let Some(sandbox) = sandbox else {
        return Ok(GateReport::skipped(Gate::G3, vec![], "no sandbox provider configured"));
    };
    let mut findings = Vec::new();
    for script in scripts {
        let outcome = sandbox.run_script(artifact, script, limits)?;
        if sandbox.is_dry_run() {
            for n in &outcome.notes {
                findings.push(GateFinding::new(
                    "dry-run",
                    Severity::Info,
                    outcome.script.clone(),
                    n.clone(),
                ));
            }
        }
        findings.extend(judge(&outcome, limits));
    }
    if sandbox.is_dry_run() {
        Ok(GateReport::skipped(
            Gate::G3,
            findings,
            format!("{}: scripts inspected, not executed", sandbox.name()),
        ))
    } else {
        let mut r = GateReport::from_findings(Gate::G3, findings);
        r.notes.push(format!("executed by {}", sandbox.name()));
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::GateVerdict;
    use crate::skillmd::Frontmatter;

    fn artifact(scripts: &[(&str, &str)]) -> SkillArtifact {
        SkillArtifact {
            frontmatter: Frontmatter {
                name: "sandboxed".into(),
                description: "d".into(),
                version: "1.0.0".into(),
                trigger: vec!["t".into()],
                dependencies: vec![],
                allowed_tools: None,
                success_criteria: None,
            },
            instructions: String::new(),
            resources: scripts
                .iter()
                .map(|(p, t)| ResourceRef::new(*p, t.as_bytes().to_vec()).unwrap())
                .collect(),
        }
    }

    struct Scripted(ScriptOutcome);
    impl SandboxRunner for Scripted {
        fn name(&self) -> &str {
            "mock"
        }
        fn run_script(
            &self,
            _: &SkillArtifact,
            s: &ResourceRef,
            _: &SandboxLimits,
        ) -> Result<ScriptOutcome, SandboxError> {
            Ok(ScriptOutcome {
                script: s.path.clone(),
                ..self.0.clone()
            })
        }
    }

    #[test]
    fn no_scripts_or_no_provider_is_skipped() {
        let r = g3_sandbox_execute(&artifact(&[]), Some(&DryRunSandbox), &SandboxLimits::default()).unwrap();
        assert_eq!((r.verdict, r.findings.len()), (GateVerdict::Skipped, 0));
        let a = artifact(&[("scripts/a.py", "print(1)\n")]);
        let r = g3_sandbox_execute(&a, None, &SandboxLimits::default()).unwrap();
        assert_eq!(r.verdict, GateVerdict::Skipped);
    }

    #[test]
    fn dry_run_is_skipped_with_findings() {
        let a = artifact(&[("scripts/a.py", "print(1)\n")]);
        let r = g3_sandbox_execute(&a, Some(&DryRunSandbox), &SandboxLimits::default()).unwrap();
        assert_eq!(r.verdict, GateVerdict::Skipped);
        assert_eq!(r.findings[0].evidence, "1 lines, interpreter python3");
    }

    #[test]
    fn mock_outcomes() {
        let a = artifact(&[("scripts/a.py", "print(1)\n")]);
        let limits = SandboxLimits::default();
        let green = Scripted(ScriptOutcome {
            exit_code: Some(0),
            ..Default::default()
        });
        assert_eq!(
            g3_sandbox_execute(&a, Some(&green), &limits).unwrap().verdict,
            GateVerdict::Pass
        );
        let escape = Scripted(ScriptOutcome {
            exit_code: Some(0),
            files_outside_jail: vec!["/etc/passwd".into()],
            ..Default::default()
        });
        let r = g3_sandbox_execute(&a, Some(&escape), &limits).unwrap();
        assert_eq!(r.verdict, GateVerdict::Fail);
        assert_eq!(r.findings[0].rule_id, "fs-escape");
        let hog = Scripted(ScriptOutcome {
            exit_code: Some(0),
            peak_memory_bytes: limits.memory_bytes + 1,
            ..Default::default()
        });
        assert_eq!(
            g3_sandbox_execute(&a, Some(&hog), &limits).unwrap().findings[0].rule_id,
            "resource-cap"
        );
    }

    #[cfg(unix)]
    #[test]
    fn external_sandbox_protocol() {
        let a = artifact(&[("scripts/a.sh", "echo hi\n")]);
        let ok = ExternalSandbox::new(vec![
            "sh".into(),
            "-c".into(),
            r#"test -f "$1/$2" && echo '{"script":"","exit_code":0}'"#.into(),
            "sandbox".into(),
        ])
        .unwrap();
        let r = g3_sandbox_execute(&a, Some(&ok), &SandboxLimits::default()).unwrap();
        assert_eq!(r.verdict, GateVerdict::Pass);

        let slow = ExternalSandbox::new(vec!["sh".into(), "-c".into(), "sleep 5".into(), "x".into()]).unwrap();
        let limits = SandboxLimits {
            wall_clock_ms: 100,
            ..Default::default()
        };
        assert!(matches!(
            g3_sandbox_execute(&a, Some(&slow), &limits),
            Err(SandboxError::SandboxTimeout(s)) if s == "scripts/a.sh"
        ));
        let missing = ExternalSandbox::new(vec!["/nonexistent/sandbox".into()]).unwrap();
        assert!(matches!(
            g3_sandbox_execute(&a, Some(&missing), &SandboxLimits::default()),
            Err(SandboxError::SandboxUnavailable(_))
        ));
    }
}
