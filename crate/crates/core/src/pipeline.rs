//! End-to-end extraction: scan, identify, synthesize, verify, write.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::CriticConfig;
use crate::gates::{
    self, assign_trust_tier, extract_tool_invocations, g1_static_scan, g2_semantic_check, g3_sandbox_execute,
    g4_permission_validate, gated_tools, CompiledPolicy, Gate, GateFinding, GateReport, SandboxError, SandboxLimits,
    SandboxRunner, SemanticClassifier, Severity, TrustTier,
};
use crate::identify::{
    filter_by_threshold, rerank, retrieve_candidates, segment_modules, CandidateModule, EmbeddingProvider,
    IdentifierConfig, IdentifyError, RelevanceScorer, TaskDescription,
};
use crate::repo::{language_hint, scan_repository, RepoMap, ScanConfig};
use crate::skillmd::{
    disclosure_report, validate_skill, write_skill_dir, DisclosureReport, SkillArtifact, ValidationReport,
};
use crate::synth::{
    detect_dependencies, local_modules, synthesize_skill, DraftContext, InstructionDrafter, SanitizationLog,
    TemplateRegistry,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NO_CANDIDATES: i32 = 2;
pub const EXIT_REJECTED: i32 = 3;

/// Settings for every stage. Each section falls back to its defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scan: ScanConfig,
    pub identifier: IdentifierConfig,
    pub critic: CriticConfig,
    pub gates: GateSettings,
    pub registry: RegistrySettings,
    pub synth: SynthSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSettings {
    /// JSON rule table replacing the built-in policy.
    pub policy: Option<PathBuf>,
    /// Sandbox command; G3 runs only when this is set.
    pub sandbox: Option<Vec<String>>,
    pub limits: SandboxLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrySettings {
    pub root: Option<PathBuf>,
    pub min_tier: TrustTier,
    pub budget_tokens: usize,
}

impl Default for RegistrySettings {
    fn default() -> Self {
        RegistrySettings {
            root: None,
            min_tier: TrustTier::T2,
            budget_tokens: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub template: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            template: "default".into(),
        }
    }
}

/// Pluggable providers for one run.
pub struct Providers<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub scorer: &'a dyn RelevanceScorer,
    pub drafter: &'a dyn InstructionDrafter,
    pub templates: &'a TemplateRegistry,
    pub classifier: Option<&'a dyn SemanticClassifier>,
    pub sandbox: Option<&'a dyn SandboxRunner>,
}

/// Validation, gate reports and the tier they earn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub validation: ValidationReport,
    pub gates: Vec<GateReport>,
    pub tier: TrustTier,
}

impl Verification {
    pub fn report(&self, gate: Gate) -> Option<&GateReport> {
        self.gates.iter().find(|r| r.gate == gate)
    }

    pub fn any_fail(&self) -> bool {
        self.gates.iter().any(|r| r.verdict == gates::GateVerdict::Fail)
    }
}

/// G3 for the pipeline: a timeout is a failing finding, an unavailable
/// sandbox is a skip.
pub fn run_g3(artifact: &SkillArtifact, sandbox: Option<&dyn SandboxRunner>, limits: &SandboxLimits) -> GateReport {
    match g3_sandbox_execute(artifact, sandbox, limits) {
        Ok(r) => r,
        Err(SandboxError::SandboxTimeout(script)) => GateReport::from_findings(
            Gate::G3,
            vec![GateFinding::new(
                "timeout",
                Severity::Critical,
                script,
                format!("exceeded {} ms wall clock", limits.wall_clock_ms),
            )],
        ),
        Err(e) => GateReport::skipped(Gate::G3, vec![], e.to_string()),
    }
}

/// Validate and run G1-G4 (G3 through `sandbox` when given).
pub fn verify_artifact(
    artifact: &SkillArtifact,
    policy: &CompiledPolicy,
    classifier: Option<&dyn SemanticClassifier>,
    sandbox: Option<&dyn SandboxRunner>,
    limits: &SandboxLimits,
) -> Verification {
    let reports = vec![
        g1_static_scan(artifact, policy),
        g2_semantic_check(artifact, classifier, policy),
        run_g3(artifact, sandbox, limits),
        g4_permission_validate(artifact, policy),
    ];
    let tier = assign_trust_tier(&reports).expect("one report per gate");
    Verification {
        validation: validate_skill(artifact),
        gates: reports,
        tier,
    }
}

/// Declare the tools the scripts invoke and the packages they import.
/// Network clients are left undeclared so they still need a human grant.
pub fn complete_manifest(artifact: &mut SkillArtifact, repo: &RepoMap, policy: &CompiledPolicy) {
    let network = gated_tools(artifact, policy);
    let tools: BTreeSet<String> = extract_tool_invocations(artifact, policy)
        .into_iter()
        .map(|i| i.tool)
        .filter(|t| !network.contains(&t.to_lowercase()))
        .collect();
    if !tools.is_empty() {
        artifact.frontmatter.allowed_tools = Some(tools.into_iter().collect());
    }
    let local = local_modules(repo);
    let deps = &mut artifact.frontmatter.dependencies;
    for r in &artifact.resources {
        let Some(text) = r.text() else { continue };
        let lang = language_hint(&r.path);
        if !matches!(lang, Some("python" | "javascript" | "typescript")) {
            continue;
        }
        for d in detect_dependencies(text, lang, &local) {
            if !deps.contains(&d) {
                deps.push(d);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub module_id: String,
    pub source_path: String,
    pub retrieval_score: f64,
    pub relevance_score: Option<f64>,
    pub promoted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub skill_id: String,
    pub name: String,
    pub directory: PathBuf,
    pub source_module: String,
    pub verification: Verification,
    pub disclosure: DisclosureReport,
    pub redactions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub repo: PathBuf,
    pub task: String,
    pub files_scanned: usize,
    pub modules: usize,
    pub candidates: Vec<CandidateSummary>,
    pub scorer_failures: Vec<(String, String)>,
    pub skills: Vec<SkillOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<PipelineErrorInfo>,
    pub exit_code: i32,
}

impl ExtractReport {
    fn new(repo: &Path, task: &str) -> Self {
        ExtractReport {
            repo: repo.to_path_buf(),
            task: task.to_string(),
            files_scanned: 0,
            modules: 0,
            candidates: vec![],
            scorer_failures: vec![],
            skills: vec![],
            error: None,
            exit_code: EXIT_OK,
        }
    }

    fn fail(mut self, code: i32, kind: &str, message: impl Into<String>) -> Self {
        self.error = Some(PipelineErrorInfo {
            kind: kind.into(),
            message: message.into(),
        });
        self.exit_code = code;
        self
    }
}

fn identify_error_kind(e: &IdentifyError) -> &'static str {
    match e {
        IdentifyError::EmptyCorpus => "EmptyCorpus",
        IdentifyError::EmptyTask => "EmptyTask",
        IdentifyError::ZeroNormVector => "ZeroNormVector",
        IdentifyError::Io { .. } => "IoFailure",
        _ => "IdentifyFailure",
    }
}

/// Pick the highest-relevance promoted candidate; earlier retrieval rank
/// wins ties.
fn best_candidate(promoted: &[CandidateModule]) -> Option<&CandidateModule> {
    promoted.iter().reduce(|best, c| {
        if c.relevance_score.unwrap_or(0.0) > best.relevance_score.unwrap_or(0.0) {
            c
        } else {
            best
        }
    })
}

/// Run the full pipeline and write the skill directory, its sanitization
/// log and `pipeline-report.json` under `out_dir`.
pub fn run_extract(
    repo_path: &Path,
    task_text: &str,
    out_dir: &Path,
    config: &PipelineConfig,
    policy: &CompiledPolicy,
    providers: &Providers,
) -> ExtractReport {
    let report = extract_inner(repo_path, task_text, out_dir, config, policy, providers);
    if report.exit_code != EXIT_FAILURE || out_dir.exists() {
        let written = fs::create_dir_all(out_dir).and_then(|_| {
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            fs::write(out_dir.join("pipeline-report.json"), json + "\n")
        });
        if let Err(e) = written {
            return report.fail(EXIT_FAILURE, "IoFailure", format!("writing report: {e}"));
        }
    }
    report
}

fn extract_inner(
    repo_path: &Path,
    task_text: &str,
    out_dir: &Path,
    config: &PipelineConfig,
    policy: &CompiledPolicy,
    providers: &Providers,
) -> ExtractReport {
    let report = ExtractReport::new(repo_path, task_text);
    let task = match TaskDescription::new("task-1", task_text) {
        Ok(t) => t,
        Err(e) => return report.fail(EXIT_FAILURE, identify_error_kind(&e), e.to_string()),
    };
    let repo = match scan_repository(repo_path, &config.scan) {
        Ok(r) => r,
        Err(e) => return report.fail(EXIT_FAILURE, e.kind(), e.to_string()),
    };
    let mut report = report;
    report.files_scanned = repo.files.len();
    let modules = match segment_modules(&repo, providers.embedder) {
        Ok(m) => m,
        Err(e) => return report.fail(EXIT_FAILURE, identify_error_kind(&e), e.to_string()),
    };
    report.modules = modules.len();
    if modules.is_empty() {
        return report.fail(EXIT_NO_CANDIDATES, "EmptyCorpus", "repository has no candidate modules");
    }
    let retrieved = match retrieve_candidates(&task, &modules, &config.identifier, providers.embedder) {
        Ok(r) => r,
        Err(IdentifyError::ZeroNormVector) => {
            return report.fail(
                EXIT_NO_CANDIDATES,
                "ZeroNormVector",
                "task text has no embeddable tokens",
            )
        }
        Err(e) => return report.fail(EXIT_FAILURE, identify_error_kind(&e), e.to_string()),
    };
    let reranked = rerank(&task, retrieved, providers.scorer);
    report.scorer_failures = reranked.failures;
    let promoted = match filter_by_threshold(&reranked.scored, &config.identifier) {
        Ok(p) => p,
        Err(e) => return report.fail(EXIT_FAILURE, identify_error_kind(&e), e.to_string()),
    };
    let promoted_ids: BTreeSet<&str> = promoted.iter().map(|c| c.module_id.as_str()).collect();
    report.candidates = reranked
        .scored
        .iter()
        .map(|c| CandidateSummary {
            module_id: c.module_id.clone(),
            source_path: c.source_path.clone(),
            retrieval_score: c.retrieval_score,
            relevance_score: c.relevance_score,
            promoted: promoted_ids.contains(c.module_id.as_str()),
        })
        .collect();
    let Some(best) = best_candidate(&promoted) else {
        return report.fail(
            EXIT_NO_CANDIDATES,
            "NoCandidates",
            format!(
                "no candidate scored above τ = {}",
                config.identifier.relevance_threshold
            ),
        );
    };

    let ctx = DraftContext {
        candidate: best,
        repo: &repo,
        template_id: &config.synth.template,
        task: &task,
    };
    let synthesized = match synthesize_skill(&ctx, providers.templates, providers.drafter) {
        Ok(s) => s,
        Err(e) => return report.fail(EXIT_FAILURE, "SynthesisFailure", e.to_string()),
    };
    let mut artifact = synthesized.artifact;
    complete_manifest(&mut artifact, &repo, policy);
    let verification = verify_artifact(
        &artifact,
        policy,
        providers.classifier,
        providers.sandbox,
        &config.gates.limits,
    );
    if !verification.validation.is_valid() {
        let first = &verification.validation.errors[0];
        let msg = format!("{}: {}", first.code.as_str(), first.message);
        report.skills.push(outcome(
            &artifact,
            out_dir.join(&artifact.frontmatter.name),
            best,
            verification,
            &synthesized.sanitization,
        ));
        return report.fail(EXIT_REJECTED, "ValidationFailed", msg);
    }
    let dir = match write_outputs(&artifact, &synthesized.sanitization, out_dir) {
        Ok(d) => d,
        Err(e) => return report.fail(EXIT_FAILURE, "IoFailure", e),
    };
    report
        .skills
        .push(outcome(&artifact, dir, best, verification, &synthesized.sanitization));
    report
}

fn outcome(
    artifact: &SkillArtifact,
    directory: PathBuf,
    source: &CandidateModule,
    verification: Verification,
    log: &SanitizationLog,
) -> SkillOutcome {
    SkillOutcome {
        skill_id: artifact.skill_id(),
        name: artifact.frontmatter.name.clone(),
        directory,
        source_module: source.module_id.clone(),
        verification,
        disclosure: disclosure_report(artifact),
        redactions: log.count,
    }
}

fn write_outputs(artifact: &SkillArtifact, log: &SanitizationLog, out_dir: &Path) -> Result<PathBuf, String> {
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let dir = write_skill_dir(artifact, out_dir).map_err(|e| e.to_string())?;
    let log_path = out_dir.join(format!("{}.sanitization.json", artifact.frontmatter.name));
    let json = serde_json::to_string_pretty(log).expect("log serializes");
    fs::write(&log_path, json + "\n").map_err(|e| format!("{}: {e}", log_path.display()))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::GateVerdict;
    use crate::identify::{HashedEmbedder, JaccardScorer};
    use crate::skillmd::load_skill_dir;
    use crate::synth::TemplateDrafter;

    fn run(repo: &Path, task: &str, out: &Path) -> ExtractReport {
        let templates = TemplateRegistry::default();
        let providers = Providers {
            embedder: &HashedEmbedder::default(),
            scorer: &JaccardScorer,
            drafter: &TemplateDrafter,
            templates: &templates,
            classifier: None,
            sandbox: None,
        };
        let mut config = PipelineConfig::default();
        config.identifier.relevance_threshold = 0.05;
        run_extract(repo, task, out, &config, CompiledPolicy::builtin(), &providers)
    }

    #[test]
    fn extracts_one_skill_from_a_small_repo() {
        let tmp = tempfile::tempdir().unwrap();
        let repo = tmp.path().join("repo");
        fs::create_dir_all(repo.join("tools")).unwrap();
        fs::write(
            repo.join("tools/render.py"),
            "import numpy\n\ndef render_frames(scene):\n    \"\"\"Render scene frames to disk.\"\"\"\n    # 1. Load the scene\n    # 2. Render frames\n    return [scene]\n",
        )
        .unwrap();
        fs::write(repo.join("tools/run.sh"), "#!/bin/sh\npython3 tools/render.py\n").unwrap();
        let out = tmp.path().join("out");
        let r = run(&repo, "render scene frames", &out);
        assert_eq!(r.exit_code, EXIT_OK, "{:?}", r.error);
        let skill = &r.skills[0];
        assert_eq!(skill.name, "render-scene-frames");
        assert!(out.join("render-scene-frames.sanitization.json").exists());
        assert!(out.join("pipeline-report.json").exists());
        let loaded = load_skill_dir(&skill.directory).unwrap();
        assert!(loaded.frontmatter.dependencies.contains(&"numpy".to_string()));
        assert_eq!(
            loaded.frontmatter.allowed_tools.as_deref(),
            Some(&["python3".to_string()][..])
        );
        let v = &skill.verification;
        assert_eq!(v.report(Gate::G3).unwrap().verdict, GateVerdict::Skipped);
        assert_eq!(v.tier, TrustTier::T2);
    }

    #[test]
    fn empty_and_missing_repos() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let r = run(tmp.path(), "anything at all", &out);
        assert_eq!(r.exit_code, EXIT_NO_CANDIDATES);
        assert!(r.candidates.is_empty());
        let r = run(&tmp.path().join("nope"), "anything", &tmp.path().join("out2"));
        assert_eq!(r.exit_code, EXIT_FAILURE);
        assert_eq!(r.error.unwrap().kind, "RootNotFound");
    }

    #[test]
    fn network_tools_are_not_self_granted() {
        let tmp = tempfile::tempdir().unwrap();
        let repo = tmp.path();
        fs::write(
            repo.join("fetch.sh"),
            "#!/bin/sh\nfetch_data() {\n  curl -sO https://example.com/data.csv\n  gzip data.csv\n}\n",
        )
        .unwrap();
        let r = run(repo, "fetch data", &repo.join("out"));
        let skill = &r.skills[0];
        let loaded = load_skill_dir(&skill.directory).unwrap();
        assert_eq!(
            loaded.frontmatter.allowed_tools.as_deref(),
            Some(&["gzip".to_string()][..])
        );
        assert_eq!(skill.verification.tier, TrustTier::T0);
    }
}
