//! Subcommand implementations. Each returns the JSON document for stdout
//! and the process exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use base64::Engine;
use log::{info, warn};
use serde_json::{json, Value};
use skillsmith_core::critic::{self, map_to_grid, Scene};
use skillsmith_core::gates::{
    g1_static_scan, vulnerability_rate, CompiledPolicy, DryRunSandbox, ExternalSandbox, SandboxRunner,
};
use skillsmith_core::graph::{
    compose_plan, detect_redundancy, validate_graph, GraphError, DEFAULT_REDUNDANCY_THRESHOLD,
};
use skillsmith_core::identify::{HashedEmbedder, JaccardScorer};
use skillsmith_core::pipeline::{run_extract, verify_artifact, Providers, EXIT_FAILURE, EXIT_OK, EXIT_REJECTED};
use skillsmith_core::registry::{match_skills, RegistryError, Session};
use skillsmith_core::skillmd::{disclosure_report, load_skill_dir, SkillError};
use skillsmith_core::synth::{TemplateDrafter, TemplateRegistry};
use skillsmith_core::{CriticConfig, GateVerdict, PipelineConfig, Registry, SkillArtifact, SkillGraph, TrustTier};

use crate::args::{Command, GraphAction, GraphArgs};

pub struct Outcome {
    pub json: Value,
    pub code: i32,
}

impl Outcome {
    fn ok(json: Value) -> Self {
        Outcome { json, code: EXIT_OK }
    }

    fn rejected(json: Value) -> Self {
        Outcome {
            json,
            code: EXIT_REJECTED,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub code: i32,
    pub details: Option<Value>,
}

/// Variant name of an error enum, taken from its `Debug` output.
fn variant_name(e: &dyn Debug) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or("Error")
        .to_string()
}

impl Failure {
    fn new(kind: impl Into<String>, message: impl Into<String>, code: i32) -> Self {
        Failure {
            kind: kind.into(),
            message: message.into(),
            code,
            details: None,
        }
    }

    fn of<E: std::error::Error + Debug>(e: &E, code: i32) -> Self {
        Failure::new(variant_name(e), e.to_string(), code)
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind, "message": self.message });
        if let Some(d) = &self.details {
            err["details"] = d.clone();
        }
        json!({ "error": err })
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let root = e.root_cause();
        let kind = if root.downcast_ref::<std::io::Error>().is_some() {
            "IoFailure".to_string()
        } else {
            "Error".to_string()
        };
        Failure::new(kind, format!("{e:#}"), EXIT_FAILURE)
    }
}

type CmdResult = Result<Outcome, Failure>;

pub struct Context {
    pub config: PipelineConfig,
    policy: Option<CompiledPolicy>,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self, Failure> {
        let policy = match &config.gates.policy {
            Some(p) => Some(CompiledPolicy::load(p).map_err(|e| Failure::of(&e, EXIT_FAILURE))?),
            None => None,
        };
        Ok(Context { config, policy })
    }

    fn policy(&self) -> &CompiledPolicy {
        self.policy.as_ref().unwrap_or_else(|| CompiledPolicy::builtin())
    }

    fn sandbox(&self) -> Result<Option<Box<dyn SandboxRunner>>, Failure> {
        match self.config.gates.sandbox.as_deref() {
            None | Some([]) => Ok(None),
            Some([one]) if one == "dry-run" => Ok(Some(Box::new(DryRunSandbox))),
            Some(cmd) => ExternalSandbox::new(cmd.to_vec())
                .map(|s| Some(Box::new(s) as Box<dyn SandboxRunner>))
                .map_err(|e| Failure::of(&e, EXIT_FAILURE)),
        }
    }

    fn registry_root(&self) -> Result<&Path, Failure> {
        self.config.registry.root.as_deref().ok_or_else(|| {
            Failure::new(
                "NoRegistry",
                "no registry configured; pass --registry or set SKILLSMITH_REGISTRY",
                EXIT_FAILURE,
            )
        })
    }

    fn open_registry(&self) -> Result<Registry, Failure> {
        let root = self.registry_root()?;
        Registry::open(root).map_err(|e| Failure::of(&e, EXIT_FAILURE))
    }
}

pub fn run(ctx: &Context, command: Command) -> CmdResult {
    match command {
        Command::Extract {
            repo,
            task,
            out,
            threshold,
            top_k,
        } => extract(ctx, &repo, &task, &out, threshold, top_k),
        Command::Validate { skill_dir } => validate(&skill_dir),
        Command::Scan { skill_dir } => scan(ctx, &skill_dir),
        Command::Register { skill_dir, min_tier } => register(ctx, &skill_dir, min_tier),
        Command::Query { text } => query(ctx, &text),
        Command::Activate {
            skill_id,
            query,
            budget,
        } => activate(ctx, &skill_id, &query, budget),
        Command::Resource { skill_id, path } => resource(ctx, &skill_id, &path),
        Command::Graph(args) => graph(ctx, args),
        Command::Critic { scene, threshold } => critic_cmd(ctx, &scene, threshold),
        Command::Report { dirs } => report(ctx, &dirs),
    }
}

fn extract(
    ctx: &Context,
    repo: &Path,
    task: &str,
    out: &Path,
    threshold: Option<f64>,
    top_k: Option<usize>,
) -> CmdResult {
    let mut config = ctx.config.clone();
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Failure::new(
                "InvalidThreshold",
                format!("threshold {t} is outside [0, 1]"),
                EXIT_FAILURE,
            ));
        }
        config.identifier.relevance_threshold = t;
    }
    if let Some(k) = top_k {
        config.identifier.top_k = k;
    }
    let embedder = HashedEmbedder::new(config.identifier.embedding_dims).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let templates = TemplateRegistry::default();
    let sandbox = ctx.sandbox()?;
    let providers = Providers {
        embedder: &embedder,
        scorer: &JaccardScorer,
        drafter: &TemplateDrafter,
        templates: &templates,
        classifier: None,
        sandbox: sandbox.as_deref(),
    };
    info!("extracting from {} for task {task:?}", repo.display());
    let report = run_extract(repo, task, out, &config, ctx.policy(), &providers);
    if let Some(e) = &report.error {
        warn!("{}: {}", e.kind, e.message);
    }
    for s in &report.skills {
        info!("wrote {} at tier {:?}", s.directory.display(), s.verification.tier);
    }
    let code = report.exit_code;
    Ok(Outcome {
        json: serde_json::to_value(&report).context("serializing report")?,
        code,
    })
}

fn load(dir: &Path) -> Result<SkillArtifact, Failure> {
    load_skill_dir(dir).map_err(|e| {
        let code = match e {
            SkillError::Io { .. } | SkillError::MissingSkillFile { .. } => EXIT_FAILURE,
            _ => EXIT_REJECTED,
        };
        Failure::of(&e, code)
    })
}

fn validate(dir: &Path) -> CmdResult {
    let artifact = load(dir)?;
    let report = skillmd_report(&artifact);
    let valid = report["valid"].as_bool().unwrap_or(false);
    Ok(if valid {
        Outcome::ok(report)
    } else {
        Outcome::rejected(report)
    })
}

fn skillmd_report(artifact: &SkillArtifact) -> Value {
    let v = skillsmith_core::skillmd::validate_skill(artifact);
    json!({
        "skill_id": artifact.skill_id(),
        "valid": v.is_valid(),
        "errors": v.errors,
        "warnings": v.warnings,
        "disclosure": disclosure_report(artifact),
    })
}

fn scan(ctx: &Context, dir: &Path) -> CmdResult {
    let artifact = load(dir)?;
    let sandbox = ctx.sandbox()?;
    let v = verify_artifact(
        &artifact,
        ctx.policy(),
        None,
        sandbox.as_deref(),
        &ctx.config.gates.limits,
    );
    let failed = v.any_fail() || !v.validation.is_valid();
    let json = json!({ "skill_id": artifact.skill_id(), "verification": v });
    Ok(if failed {
        Outcome::rejected(json)
    } else {
        Outcome::ok(json)
    })
}

fn register(ctx: &Context, dir: &Path, min_tier: Option<TrustTier>) -> CmdResult {
    let artifact = load(dir)?;
    let mut registry = ctx.open_registry()?;
    let sandbox = ctx.sandbox()?;
    let v = verify_artifact(
        &artifact,
        ctx.policy(),
        None,
        sandbox.as_deref(),
        &ctx.config.gates.limits,
    );
    let min_tier = min_tier.unwrap_or(ctx.config.registry.min_tier);
    let details = serde_json::to_value(&v).context("serializing verification")?;
    match registry.register(artifact, v.tier, min_tier) {
        Ok(record) => {
            info!("registered {} at {:?}", record.skill_id, record.tier);
            Ok(Outcome::ok(json!({
                "skill_id": record.skill_id,
                "tier": record.tier,
                "registered_at": record.registered_at,
                "verification": details,
            })))
        }
        Err(e @ (RegistryError::TierTooLow { .. } | RegistryError::ValidationFailed(_))) => {
            Err(Failure::of(&e, EXIT_REJECTED).with_details(details))
        }
        Err(e) => Err(Failure::of(&e, EXIT_FAILURE)),
    }
}

fn query(ctx: &Context, text: &str) -> CmdResult {
    let registry = ctx.open_registry()?;
    let index = registry.build_metadata_index();
    let matches = match_skills(text, &index).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let by_id: BTreeMap<&str, _> = index.entries.iter().map(|e| (e.skill_id.as_str(), e)).collect();
    let ranked: Vec<Value> = matches
        .iter()
        .map(|m| {
            let e = by_id[m.skill_id.as_str()];
            json!({
                "skill_id": m.skill_id,
                "score": m.score,
                "name": e.name,
                "description": e.description,
                "tier": e.tier,
            })
        })
        .collect();
    Ok(Outcome::ok(json!({
        "query": text,
        "index_tokens": index.total_tokens,
        "matches": ranked,
    })))
}

fn activate(ctx: &Context, skill_id: &str, query: &str, budget: Option<usize>) -> CmdResult {
    let registry = ctx.open_registry()?;
    let mut session = Session::new(&registry, budget.unwrap_or(ctx.config.registry.budget_tokens));
    let matches = session.query(query).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let payload = session.activate(skill_id).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    Ok(Outcome::ok(json!({ "matches": matches, "activation": payload })))
}

fn resource(ctx: &Context, skill_id: &str, path: &str) -> CmdResult {
    let registry = ctx.open_registry()?;
    let bytes = registry
        .resolve_resource(skill_id, path)
        .map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let (encoding, content) = match std::str::from_utf8(bytes) {
        Ok(s) => ("utf-8", s.to_string()),
        Err(_) => ("base64", base64::engine::general_purpose::STANDARD.encode(bytes)),
    };
    Ok(Outcome::ok(json!({
        "skill_id": skill_id,
        "path": path,
        "bytes": bytes.len(),
        "encoding": encoding,
        "content": content,
    })))
}

fn graph_path(ctx: &Context, args: &GraphArgs) -> Result<PathBuf, Failure> {
    match &args.graph {
        Some(p) => Ok(p.clone()),
        None => Ok(ctx.registry_root()?.join("graph.json")),
    }
}

fn load_graph(path: &Path) -> Result<SkillGraph, Failure> {
    if !path.exists() {
        return Ok(SkillGraph::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SkillGraph::from_json(&text)
        .map_err(|e| Failure::new("CorruptGraph", format!("{}: {e}", path.display()), EXIT_FAILURE))
}

fn save_graph(path: &Path, graph: &SkillGraph) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, graph.to_json() + "\n").with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

fn graph_failure(e: GraphError) -> Failure {
    match e {
        GraphError::CycleDetected(ref witness) => {
            let w = witness.clone();
            Failure::of(&e, EXIT_REJECTED).with_details(json!({ "witness": w }))
        }
        GraphError::SelfEdge(_) | GraphError::DuplicateEdge => Failure::of(&e, EXIT_REJECTED),
        _ => Failure::of(&e, EXIT_FAILURE),
    }
}

fn graph(ctx: &Context, args: GraphArgs) -> CmdResult {
    let path = graph_path(ctx, &args)?;
    let g = load_graph(&path)?;
    match args.action {
        GraphAction::Add { from, relation, to } => {
            let mut next = g;
            for id in [&from, &to] {
                if !next.contains(id) {
                    next = next.with_node(id.clone());
                }
            }
            let next = next.with_relation(&from, relation.into(), &to).map_err(graph_failure)?;
            save_graph(&path, &next)?;
            Ok(Outcome::ok(json!({
                "graph": path,
                "added": { "from": from, "relation": skillsmith_core::graph::RelationKind::from(relation), "to": to },
                "nodes": next.nodes().len(),
                "edges": next.edges().len(),
            })))
        }
        GraphAction::Check => {
            let findings = validate_graph(&g);
            let json = json!({ "graph": path, "findings": findings });
            Ok(if findings.is_empty() {
                Outcome::ok(json)
            } else {
                Outcome::rejected(json)
            })
        }
        GraphAction::Plan { goals } => {
            let goals: BTreeSet<String> = goals.into_iter().collect();
            let plan = compose_plan(&g, &goals).map_err(graph_failure)?;
            Ok(Outcome::ok(serde_json::to_value(plan).context("serializing plan")?))
        }
        GraphAction::Redundancy { threshold } => {
            let registry = ctx.open_registry()?;
            let embedder =
                HashedEmbedder::new(ctx.config.identifier.embedding_dims).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
            let t = threshold.unwrap_or(DEFAULT_REDUNDANCY_THRESHOLD);
            let pairs = detect_redundancy(&g, &registry, t, &embedder).map_err(graph_failure)?;
            Ok(Outcome::ok(json!({ "threshold": t, "pairs": pairs })))
        }
    }
}

fn critic_cmd(ctx: &Context, scene_path: &Path, threshold: Option<f64>) -> CmdResult {
    let text = std::fs::read_to_string(scene_path).with_context(|| format!("reading {}", scene_path.display()))?;
    let scene = Scene::from_json(&text).map_err(|e| Failure::new("InvalidScene", e.to_string(), EXIT_FAILURE))?;
    let t = threshold
        .or(scene.overlap_threshold)
        .unwrap_or(ctx.config.critic.overlap_threshold);
    let config = CriticConfig::new(t).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let suggestions =
        critic::critique_layout(&scene.elements, &scene.frame, &config).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let mut cells = serde_json::Map::new();
    for e in &scene.elements {
        let c = map_to_grid(e, &scene.frame).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
        cells.insert(e.element_id.clone(), json!(c));
    }
    Ok(Outcome::ok(json!({
        "overlap_threshold": t,
        "cells": cells,
        "suggestions": suggestions,
    })))
}

/// Skill directories under `dir`: the directory itself when it holds a
/// `SKILL.md`, otherwise its immediate children that do.
fn skill_dirs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if dir.join("SKILL.md").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("SKILL.md").is_file())
        .collect();
    out.sort();
    Ok(out)
}

fn report(ctx: &Context, dirs: &[PathBuf]) -> CmdResult {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for d in dirs {
        for skill in skill_dirs(d)? {
            let artifact = load(&skill)?;
            let g1 = g1_static_scan(&artifact, ctx.policy());
            let critical: BTreeSet<&str> = g1
                .findings
                .iter()
                .filter(|f| f.severity == skillsmith_core::Severity::Critical)
                .map(|f| f.rule_id.as_str())
                .collect();
            rows.push(json!({
                "skill_id": artifact.skill_id(),
                "path": skill,
                "verdict": g1.verdict,
                "critical_rules": critical,
            }));
            reports.push((artifact.skill_id(), g1));
        }
    }
    let rate = vulnerability_rate(&reports).map_err(|e| Failure::of(&e, EXIT_FAILURE))?;
    let flagged = reports.iter().filter(|(_, r)| r.verdict == GateVerdict::Fail).count();
    Ok(Outcome::ok(json!({
        "total": reports.len(),
        "flagged": flagged,
        "vulnerability_rate": rate,
        "skills": rows,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        assert_eq!(variant_name(&RegistryError::EmptyQuery), "EmptyQuery");
        assert_eq!(
            variant_name(&RegistryError::BudgetExceeded {
                needed: 3,
                available: 1
            }),
            "BudgetExceeded"
        );
        assert_eq!(
            variant_name(&GraphError::CycleDetected(vec!["a".into()])),
            "CycleDetected"
        );
    }
}
