//! Turning a promoted candidate into a skill: frontmatter, a drafted
//! instruction body, bundled resources and redaction of hardcoded literals.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identify::{CandidateModule, TaskDescription};
use crate::repo::{FileEntry, FileRole, RepoMap};
use crate::secrets;
use crate::skillmd::{Frontmatter, ResourceKind, ResourceRef, SkillArtifact};
use crate::text;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("task text has no alphanumeric content to derive a name from")]
    UnnameableTask,
    #[error("no instruction template registered as `{0}`")]
    TemplateNotFound(String),
    #[error("instruction drafter failed: {0}")]
    DrafterFailure(String),
    #[error("source file `{0}` is missing from the repository")]
    MissingSourceFile(String),
}

pub const NAME_MAX_CHARS: usize = 64;
pub const NEW_SKILL_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redaction {
    pub pattern_id: String,
    /// `line:col`, optionally prefixed by `path:`.
    pub location: String,
    pub replacement: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizationLog {
    pub redactions: Vec<Redaction>,
    pub count: usize,
}

impl SanitizationLog {
    pub fn extend(&mut self, other: SanitizationLog) {
        self.redactions.extend(other.redactions);
        self.count = self.redactions.len();
    }

    fn prefix_locations(mut self, path: &str) -> Self {
        for r in &mut self.redactions {
            r.location = format!("{path}:{}", r.location);
        }
        self
    }
}

/// Replace every hardcoded literal with its placeholder.
pub fn sanitize_content(text: &str) -> (String, SanitizationLog) {
    let matches = secrets::find_matches(text);
    let mut out = String::with_capacity(text.len());
    let mut log = SanitizationLog::default();
    let mut cursor = 0;
    for m in matches {
        let (line, col) = text::line_col(text, m.span.start);
        out.push_str(&text[cursor..m.span.start]);
        out.push_str(m.placeholder);
        cursor = m.span.end;
        log.redactions.push(Redaction {
            pattern_id: m.rule.id().to_string(),
            location: format!("{line}:{col}"),
            replacement: m.placeholder.to_string(),
        });
    }
    out.push_str(&text[cursor..]);
    log.count = log.redactions.len();
    (out, log)
}

/// Everything the synthesizer needs about one promoted candidate.
#[derive(Debug, Clone, Copy)]
pub struct DraftContext<'a> {
    pub candidate: &'a CandidateModule,
    pub repo: &'a RepoMap,
    pub template_id: &'a str,
    pub task: &'a TaskDescription,
}

impl DraftContext<'_> {
    /// Full text of the candidate's source file, or the excerpt when the
    /// file cannot be read.
    pub fn source_text(&self) -> String {
        std::fs::read(self.repo.root_path().join(&self.candidate.source_path))
            .map(|b| String::from_utf8_lossy(&b).into_owned())
            .unwrap_or_else(|_| self.candidate.source_excerpt.clone())
    }
}

/// Lowercase, ASCII alphanumerics only, hyphen-joined, at most 64 chars.
pub fn derive_name(task_text: &str) -> Result<String, SynthError> {
    let lower = task_text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(SynthError::UnnameableTask);
    }
    let mut name = words.join("-");
    if name.len() > NAME_MAX_CHARS {
        name.truncate(NAME_MAX_CHARS);
        name = name.trim_end_matches('-').to_string();
    }
    Ok(name)
}

fn first_sentence(text: &str) -> String {
    let trimmed = text.trim();
    let mut end = trimmed.len();
    let mut chars = trimmed.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            end = i;
            break;
        }
    }
    let sentence: String = trimmed[..end].split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = sentence.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().chain(chars).collect(),
        None => sentence,
    }
}

/// Up to three most frequent bigrams of the task's content words, then the
/// whole normalized phrase.
pub fn derive_triggers(task_text: &str) -> Vec<String> {
    let all = text::tokenize(task_text);
    let content: Vec<String> = {
        let stop = text::content_tokens(task_text);
        let kept: Vec<String> = all.iter().filter(|t| stop.contains(*t)).cloned().collect();
        if kept.len() >= 2 {
            kept
        } else {
            all.clone()
        }
    };
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (i, w) in content.windows(2).enumerate() {
        let bigram = format!("{} {}", w[0], w[1]);
        counts.entry(bigram).or_insert((0, i)).0 += 1;
    }
    let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let mut out: Vec<String> = ranked.into_iter().take(3).map(|(b, _)| b).collect();
    let phrase = all.join(" ");
    if !phrase.is_empty() {
        out.push(phrase);
    }
    let mut seen = BTreeSet::new();
    out.retain(|t| seen.insert(t.clone()));
    out
}

static PY_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*import\s+([A-Za-z_][\w.]*(?:\s*,\s*[A-Za-z_][\w.]*)*)").unwrap());
static PY_FROM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*from\s+([A-Za-z_][\w.]*)\s+import\b").unwrap());
static JS_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?:require\(\s*|\bfrom\s+|^\s*import\s+)['"]([^'"]+)['"]"#).unwrap());

const PY_STDLIB: &[&str] = &[
    "abc",
    "argparse",
    "ast",
    "asyncio",
    "base64",
    "collections",
    "contextlib",
    "copy",
    "csv",
    "dataclasses",
    "datetime",
    "enum",
    "functools",
    "glob",
    "hashlib",
    "heapq",
    "http",
    "importlib",
    "inspect",
    "io",
    "itertools",
    "json",
    "logging",
    "math",
    "multiprocessing",
    "operator",
    "os",
    "pathlib",
    "pickle",
    "platform",
    "pprint",
    "random",
    "re",
    "shlex",
    "shutil",
    "signal",
    "socket",
    "sqlite3",
    "statistics",
    "string",
    "struct",
    "subprocess",
    "sys",
    "tempfile",
    "textwrap",
    "threading",
    "time",
    "traceback",
    "typing",
    "unittest",
    "urllib",
    "uuid",
    "warnings",
    "xml",
    "zipfile",
    "__future__",
];
const NODE_BUILTINS: &[&str] = &[
    "assert",
    "buffer",
    "child_process",
    "crypto",
    "events",
    "fs",
    "http",
    "https",
    "net",
    "os",
    "path",
    "process",
    "stream",
    "url",
    "util",
    "zlib",
];

/// Third-party packages imported by `source`, in first-seen order.
///
/// Python module names map to distribution names by replacing `_` with
/// `-`. Standard-library modules and names in `local` are skipped.
pub fn detect_dependencies(source: &str, language: Option<&str>, local: &BTreeSet<String>) -> Vec<String> {
    let is_js = matches!(language, Some("javascript") | Some("typescript"));
    let is_py = language.is_none_or(|l| l == "python");
    let mut found: Vec<(usize, String)> = Vec::new();
    let mut python = |start: usize, module: &str| {
        let top = module.split('.').next().unwrap_or(module);
        if top.is_empty() || PY_STDLIB.contains(&top) || local.contains(top) {
            return;
        }
        found.push((start, top.replace('_', "-")));
    };
    for c in PY_IMPORT.captures_iter(source).filter(|_| is_py) {
        let m = c.get(1).unwrap();
        for (k, part) in m.as_str().split(',').enumerate() {
            let part = part.split_whitespace().next().unwrap_or("");
            python(m.start() + k, part);
        }
    }
    for c in PY_FROM.captures_iter(source).filter(|_| is_py) {
        let m = c.get(1).unwrap();
        python(m.start(), m.as_str());
    }
    for c in JS_IMPORT.captures_iter(source).filter(|_| is_js || language.is_none()) {
        let m = c.get(1).unwrap();
        let spec = m.as_str();
        if spec.starts_with('.') || spec.starts_with('/') {
            continue;
        }
        let spec = spec.strip_prefix("node:").unwrap_or(spec);
        let name = if spec.starts_with('@') {
            spec.splitn(3, '/').take(2).collect::<Vec<_>>().join("/")
        } else {
            spec.split('/').next().unwrap_or(spec).to_string()
        };
        if NODE_BUILTINS.contains(&name.as_str()) || local.contains(&name) {
            continue;
        }
        found.push((m.start(), name));
    }
    found.sort_by_key(|(pos, _)| *pos);
    let mut seen = BTreeSet::new();
    found
        .into_iter()
        .map(|(_, n)| n)
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// Module names defined by the repository itself.
pub fn local_modules(repo: &RepoMap) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for f in &repo.files {
        let mut parts = f.path.split('/').peekable();
        while let Some(part) = parts.next() {
            let stem = if parts.peek().is_none() {
                part.rsplit_once('.').map_or(part, |(s, _)| s)
            } else {
                part
            };
            out.insert(stem.to_string());
        }
    }
    out
}

pub fn synthesize_frontmatter(ctx: &DraftContext) -> Result<Frontmatter, SynthError> {
    let name = derive_name(&ctx.task.text)?;
    let phrase = text::tokenize(&ctx.task.text).join(" ");
    let file = ctx
        .candidate
        .source_path
        .rsplit('/')
        .next()
        .unwrap_or(&ctx.candidate.source_path);
    let description = format!(
        "{}. Activate when a request involves {phrase}; follows the procedure extracted from {file}.",
        first_sentence(&ctx.task.text)
    );
    let dependencies = detect_dependencies(
        &ctx.source_text(),
        ctx.candidate.language.as_deref(),
        &local_modules(ctx.repo),
    );
    Ok(Frontmatter {
        name,
        description,
        version: NEW_SKILL_VERSION.to_string(),
        trigger: derive_triggers(&ctx.task.text),
        dependencies,
        allowed_tools: None,
        success_criteria: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    pub id: String,
    pub sections: Vec<String>,
}

pub const DEFAULT_TEMPLATE: &str = "default";
pub const DEFAULT_SECTIONS: [&str; 4] = ["Workflow", "Error Handling", "Best Practices", "Integration Patterns"];

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, InstructionTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut r = TemplateRegistry {
            templates: BTreeMap::new(),
        };
        r.register(InstructionTemplate {
            id: DEFAULT_TEMPLATE.to_string(),
            sections: DEFAULT_SECTIONS.iter().map(|s| s.to_string()).collect(),
        });
        r
    }
}

impl TemplateRegistry {
    pub fn register(&mut self, template: InstructionTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&InstructionTemplate, SynthError> {
        self.templates
            .get(id)
            .ok_or_else(|| SynthError::TemplateNotFound(id.to_string()))
    }
}

/// Produces the Level-2 instruction body for a candidate.
pub trait InstructionDrafter: Send + Sync {
    fn draft(&self, ctx: &DraftContext, template: &InstructionTemplate) -> Result<String, String>;
}

pub fn draft_instructions(
    ctx: &DraftContext,
    templates: &TemplateRegistry,
    drafter: &dyn InstructionDrafter,
) -> Result<String, SynthError> {
    let template = templates.get(ctx.template_id)?;
    drafter.draft(ctx, template).map_err(SynthError::DrafterFailure)
}

static NUMBERED_STEP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*(?:#+|//+|\*|"""|''')?\s*(\d+)[.)]\s+(\S.*?)\s*$"#).unwrap());
static CALL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-Za-z_][A-Za-z0-9_.]*)\s*\(").unwrap());
static EXCEPTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:except|catch)\s*\(?\s*([A-Z][A-Za-z0-9_.]*)").unwrap());
static RAISE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:raise|throw)\s+(?:new\s+)?([A-Z][A-Za-z0-9_]*)").unwrap());

const NOT_STEPS: &[&str] = &[
    "if",
    "for",
    "while",
    "return",
    "print",
    "def",
    "function",
    "len",
    "str",
    "int",
    "float",
    "range",
    "list",
    "dict",
    "set",
    "tuple",
    "isinstance",
    "super",
    "catch",
    "switch",
    "elif",
    "with",
    "not",
    "and",
    "or",
];

/// Numbered steps (`1. ...`) found in comments or docstrings, starting at 1.
pub fn numbered_steps(source: &str) -> Vec<String> {
    let mut steps = Vec::new();
    for line in source.lines() {
        let Some(c) = NUMBERED_STEP.captures(line) else {
            continue;
        };
        let n: usize = c[1].parse().unwrap_or(0);
        if n == steps.len() + 1 {
            steps.push(c[2].trim_end_matches(['"', '\'']).trim().to_string());
        } else if n == 1 && !steps.is_empty() {
            break;
        }
    }
    steps
}

fn called_functions(excerpt: &str, own: Option<&str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let body = excerpt
        .lines()
        .skip(usize::from(own.is_some()))
        .collect::<Vec<_>>()
        .join("\n");
    CALL.captures_iter(&body)
        .map(|c| c[1].to_string())
        .filter(|n| !NOT_STEPS.contains(&n.as_str()) && Some(n.as_str()) != own)
        .filter(|n| seen.insert(n.clone()))
        .take(8)
        .collect()
}

fn interpreter(language: Option<&str>) -> &'static str {
    match language {
        Some("python") => "python",
        Some("javascript") | Some("typescript") => "node",
        Some("shell") => "bash",
        Some("ruby") => "ruby",
        _ => "",
    }
}

/// Fills the template sections from the candidate's code.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateDrafter;

impl TemplateDrafter {
    fn section(&self, heading: &str, ctx: &DraftContext) -> String {
        let c = ctx.candidate;
        let excerpt = c.source_excerpt.trim();
        let empty = excerpt.is_empty();
        let file = c.source_path.rsplit('/').next().unwrap_or(&c.source_path);
        let run = match interpreter(c.language.as_deref()) {
            "" => format!("scripts/{file}"),
            i => format!("{i} scripts/{file}"),
        };
        let mut s = String::new();
        match heading {
            "Workflow" => {
                let mut steps = numbered_steps(excerpt);
                if steps.is_empty() {
                    steps = called_functions(excerpt, c.symbol.as_deref())
                        .into_iter()
                        .map(|f| format!("Call `{f}` and check its result before continuing."))
                        .collect();
                }
                if steps.is_empty() {
                    steps.push(format!(
                        "TODO: describe the procedure for \"{}\".",
                        ctx.task.text.trim()
                    ));
                }
                for (i, step) in steps.iter().enumerate() {
                    s.push_str(&format!("{}. {step}\n", i + 1));
                }
                s.push_str(&format!(
                    "\n- Decision point: if the request does not match \"{}\", stop and report that this skill does not apply.\n",
                    ctx.task.text.trim()
                ));
                s.push_str("- Decision point: if any step fails, follow Error Handling before retrying.\n");
            }
            "Error Handling" => {
                if empty {
                    s.push_str("- TODO: document the failure modes of this procedure.\n");
                } else {
                    let mut names = BTreeSet::new();
                    for re in [&*EXCEPTION, &*RAISE] {
                        for cap in re.captures_iter(excerpt) {
                            names.insert(cap[1].to_string());
                        }
                    }
                    for n in &names {
                        s.push_str(&format!(
                            "- `{n}` may be raised; report the message and the input that caused it.\n"
                        ));
                    }
                    s.push_str("- Check that every dependency listed in the frontmatter is installed before running scripts.\n");
                    s.push_str("- On a non-zero exit status, surface stderr verbatim and do not retry silently.\n");
                }
            }
            "Best Practices" => {
                if empty {
                    s.push_str("- TODO: list conventions that keep results consistent.\n");
                } else {
                    s.push_str(
                        "- Keep inputs small and explicit; pass parameters rather than editing bundled scripts.\n",
                    );
                    s.push_str("- Supply values for `{{...}}` placeholders from the environment, never inline.\n");
                    if let Some(sym) = &c.symbol {
                        s.push_str(&format!(
                            "- Reuse `{sym}` as the entry point instead of reimplementing it.\n"
                        ));
                    }
                }
            }
            "Integration Patterns" => {
                if empty {
                    s.push_str("- TODO: describe how this skill composes with others.\n");
                } else {
                    s.push_str(&format!("- Run `{run}` from the skill directory.\n"));
                    s.push_str(
                        "- Consult `references/` for background documents and `templates/` for configuration.\n",
                    );
                    s.push_str("- Feed the output into downstream skills as files rather than pasted text.\n");
                }
            }
            _ => s.push_str("- TODO: fill in this section.\n"),
        }
        s
    }
}

impl InstructionDrafter for TemplateDrafter {
    fn draft(&self, ctx: &DraftContext, template: &InstructionTemplate) -> Result<String, String> {
        let title = first_sentence(&ctx.task.text);
        let mut body = format!("# {title}\n\n");
        body.push_str(&format!(
            "Procedural guidance for \"{}\", distilled from `{}`",
            ctx.task.text.trim(),
            ctx.candidate.source_path
        ));
        if let Some(sym) = &ctx.candidate.symbol {
            body.push_str(&format!(" (`{sym}`)"));
        }
        body.push_str(".\n");
        for heading in &template.sections {
            body.push_str(&format!("\n## {heading}\n\n"));
            body.push_str(&self.section(heading, ctx));
        }
        Ok(body)
    }
}

fn kind_for(role: FileRole) -> Option<ResourceKind> {
    match role {
        FileRole::ExecutionScript | FileRole::DomainModule => Some(ResourceKind::Script),
        FileRole::Documentation | FileRole::Other => Some(ResourceKind::Reference),
        FileRole::Configuration => Some(ResourceKind::Template),
        FileRole::Asset => None,
    }
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn stem(path: &str) -> &str {
    let name = file_name(path);
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

/// Files bundled with a candidate: its source file, plus text files that
/// mention the source by name or that the source mentions.
pub fn related_files<'a>(candidate: &CandidateModule, repo: &'a RepoMap, source: &str) -> Vec<&'a FileEntry> {
    let src_name = file_name(&candidate.source_path);
    let src_tokens = text::token_set(source);
    repo.files
        .iter()
        .filter(|f| {
            if f.path == candidate.source_path {
                return true;
            }
            if f.role == FileRole::Asset {
                return false;
            }
            let mentions_source = f.preview.contains(src_name);
            let name = file_name(&f.path);
            let code = matches!(f.role, FileRole::ExecutionScript | FileRole::DomainModule);
            let mentioned = source.contains(name) || (code && src_tokens.contains(&stem(&f.path).to_lowercase()));
            mentions_source || mentioned
        })
        .collect()
}

/// Copy, sanitize and flatten files into resource directories.
/// Name collisions get `-2`, `-3`, ... before the extension.
pub fn bundle_files(repo: &RepoMap, files: &[&FileEntry]) -> Result<(Vec<ResourceRef>, SanitizationLog), SynthError> {
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut resources = Vec::new();
    let mut log = SanitizationLog::default();
    for f in files {
        let Some(kind) = kind_for(f.role) else {
            continue;
        };
        let bytes =
            std::fs::read(repo.root_path().join(&f.path)).map_err(|_| SynthError::MissingSourceFile(f.path.clone()))?;
        let bytes = match String::from_utf8(bytes) {
            Ok(text) => {
                let (clean, l) = sanitize_content(&text);
                log.extend(l.prefix_locations(&f.path));
                clean.into_bytes()
            }
            Err(e) => e.into_bytes(),
        };
        let name = file_name(&f.path);
        let (base, ext) = match name.rsplit_once('.') {
            Some((b, e)) if !b.is_empty() => (b, format!(".{e}")),
            _ => (name, String::new()),
        };
        let mut candidate = format!("{}/{name}", kind.dir());
        let mut n = 2;
        while used.contains(&candidate) {
            candidate = format!("{}/{base}-{n}{ext}", kind.dir());
            n += 1;
        }
        used.insert(candidate.clone());
        resources.push(ResourceRef {
            path: candidate,
            kind,
            bytes,
        });
    }
    resources.sort_by(|a, b| a.path.cmp(&b.path));
    Ok((resources, log))
}

pub fn bundle_assets_logged(
    candidate: &CandidateModule,
    repo: &RepoMap,
) -> Result<(Vec<ResourceRef>, SanitizationLog), SynthError> {
    if repo.file(&candidate.source_path).is_none() {
        return Err(SynthError::MissingSourceFile(candidate.source_path.clone()));
    }
    let source = std::fs::read(repo.root_path().join(&candidate.source_path))
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .map_err(|_| SynthError::MissingSourceFile(candidate.source_path.clone()))?;
    let files = related_files(candidate, repo, &source);
    bundle_files(repo, &files)
}

pub fn bundle_assets(candidate: &CandidateModule, repo: &RepoMap) -> Result<Vec<ResourceRef>, SynthError> {
    bundle_assets_logged(candidate, repo).map(|(r, _)| r)
}

pub fn assemble(frontmatter: Frontmatter, instructions: String, resources: Vec<ResourceRef>) -> SkillArtifact {
    SkillArtifact {
        frontmatter,
        instructions,
        resources,
    }
}

#[derive(Debug, Clone)]
pub struct SynthesizedSkill {
    pub artifact: SkillArtifact,
    pub sanitization: SanitizationLog,
}

/// Frontmatter, draft and bundle for one context.
pub fn synthesize_skill(
    ctx: &DraftContext,
    templates: &TemplateRegistry,
    drafter: &dyn InstructionDrafter,
) -> Result<SynthesizedSkill, SynthError> {
    let frontmatter = synthesize_frontmatter(ctx)?;
    let (body, body_log) = sanitize_content(&draft_instructions(ctx, templates, drafter)?);
    let (resources, mut log) = bundle_assets_logged(ctx.candidate, ctx.repo)?;
    log.extend(body_log.prefix_locations("SKILL.md"));
    Ok(SynthesizedSkill {
        artifact: assemble(frontmatter, body, resources),
        sanitization: log,
    })
}
