//! SKILL.md artifacts: frontmatter parsing and serialization, structural
//! validation, and per-level token accounting.
//!
//! ```text
//! ---
//! name: visual-theorem-walkthrough
//! description: "..."
//! version: 1.0.0
//! trigger: ["visualize theorem", "animate proof"]
//! dependencies: ["manim"]
//! ---
//!
//! # Instructions ...
//! ```

mod fs;
pub mod yaml;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fs::{load_skill_dir, write_skill_dir, write_skill_into};

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("document does not begin with a `---` frontmatter block")]
    MissingFrontmatter,
    #[error("malformed frontmatter at line {line}: {message}")]
    MalformedYaml { line: usize, message: String },
    #[error("missing required field `{0}`")]
    MissingRequiredField(String),
    #[error("field `{0}` has the wrong type")]
    InvalidFieldType(String),
    #[error("artifact violates invariants: {0}")]
    InvariantViolation(String),
    #[error("{path} has no SKILL.md")]
    MissingSkillFile { path: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SkillError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        SkillError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frontmatter {
    pub name: String,
    pub description: String,
    pub version: String,
    pub trigger: Vec<String>,
    #[serde(default)]
    pub dependencies: Vec<String>,
    #[serde(default, rename = "allowed-tools", skip_serializing_if = "Option::is_none")]
    pub allowed_tools: Option<Vec<String>>,
    #[serde(default, rename = "success-criteria", skip_serializing_if = "Option::is_none")]
    pub success_criteria: Option<Vec<String>>,
}

impl Frontmatter {
    /// The text loaded at startup: name, description and triggers.
    pub fn metadata_text(&self) -> String {
        let mut parts = vec![self.name.as_str(), self.description.as_str()];
        parts.extend(self.trigger.iter().map(String::as_str));
        parts.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResourceKind {
    Script,
    Reference,
    Template,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 3] = [ResourceKind::Script, ResourceKind::Reference, ResourceKind::Template];

    pub fn dir(self) -> &'static str {
        match self {
            ResourceKind::Script => "scripts",
            ResourceKind::Reference => "references",
            ResourceKind::Template => "templates",
        }
    }

    /// Kind implied by the leading directory of a relative path.
    pub fn from_path(path: &str) -> Option<Self> {
        let head = path.split('/').next()?;
        Self::ALL.into_iter().find(|k| k.dir() == head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRef {
    /// Relative path with `/` separators, e.g. `scripts/render.py`.
    pub path: String,
    pub kind: ResourceKind,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl ResourceRef {
    /// Build a reference whose kind follows from its directory.
    pub fn new(path: impl Into<String>, bytes: Vec<u8>) -> Option<Self> {
        let path = path.into();
        let kind = ResourceKind::from_path(&path)?;
        Some(ResourceRef { path, kind, bytes })
    }

    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillArtifact {
    pub frontmatter: Frontmatter,
    pub instructions: String,
    pub resources: Vec<ResourceRef>,
}

impl SkillArtifact {
    pub fn resource(&self, path: &str) -> Option<&ResourceRef> {
        self.resources.iter().find(|r| r.path == path)
    }

    pub fn skill_id(&self) -> String {
        format!("{}@{}", self.frontmatter.name, self.frontmatter.version)
    }
}

fn normalize_body(body: &str) -> String {
    let trimmed = body.trim_end_matches('\n');
    if trimmed.is_empty() {
        String::new()
    } else {
        format!("{trimmed}\n")
    }
}

fn take_string(name: &str, value: yaml::YamlValue) -> Result<String, SkillError> {
    match value {
        yaml::YamlValue::Scalar(s) => Ok(s),
        _ => Err(SkillError::InvalidFieldType(name.to_string())),
    }
}

fn take_list(name: &str, value: yaml::YamlValue) -> Result<Vec<String>, SkillError> {
    match value {
        yaml::YamlValue::List(items) => Ok(items),
        _ => Err(SkillError::InvalidFieldType(name.to_string())),
    }
}

/// Parse a SKILL.md document. Resources are attached separately.
pub fn parse_skill(text: &str) -> Result<SkillArtifact, SkillError> {
    let after_open = text.strip_prefix("---\n").ok_or(SkillError::MissingFrontmatter)?;
    let (block, body) = if let Some(rest) = after_open.strip_prefix("---\n") {
        ("", rest)
    } else if after_open == "---" {
        ("", "")
    } else if let Some(idx) = after_open.find("\n---\n") {
        (&after_open[..idx + 1], &after_open[idx + 5..])
    } else if let Some(block) = after_open.strip_suffix("\n---") {
        (block, "")
    } else {
        return Err(SkillError::MissingFrontmatter);
    };
    let body = body.strip_prefix('\n').unwrap_or(body);

    let entries = yaml::parse_mapping(block).map_err(|e| SkillError::MalformedYaml {
        // Offset by the opening delimiter line.
        line: e.line + 1,
        message: e.message,
    })?;

    let mut name = None;
    let mut description = None;
    let mut version = None;
    let mut trigger = None;
    let mut dependencies = None;
    let mut allowed_tools = None;
    let mut success_criteria = None;
    for (key, value, _) in entries {
        match key.as_str() {
            "name" => name = Some(take_string("name", value)?),
            "description" => description = Some(take_string("description", value)?),
            "version" => version = Some(take_string("version", value)?),
            "trigger" => trigger = Some(take_list("trigger", value)?),
            "dependencies" => dependencies = Some(take_list("dependencies", value)?),
            "allowed-tools" => allowed_tools = Some(take_list("allowed-tools", value)?),
            "success-criteria" => success_criteria = Some(take_list("success-criteria", value)?),
            _ => {}
        }
    }
    let required = |v: Option<String>, n: &str| v.ok_or_else(|| SkillError::MissingRequiredField(n.to_string()));
    let frontmatter = Frontmatter {
        name: required(name, "name")?,
        description: required(description, "description")?,
        version: required(version, "version")?,
        trigger: trigger.ok_or_else(|| SkillError::MissingRequiredField("trigger".into()))?,
        dependencies: dependencies.unwrap_or_default(),
        allowed_tools,
        success_criteria,
    };
    Ok(SkillArtifact {
        frontmatter,
        instructions: normalize_body(body),
        resources: Vec::new(),
    })
}

/// Render the frontmatter block including both delimiters.
pub fn render_frontmatter(fm: &Frontmatter) -> String {
    let mut out = String::from("---\n");
    out.push_str(&format!("name: {}\n", yaml::scalar(&fm.name)));
    out.push_str(&format!("description: {}\n", yaml::scalar(&fm.description)));
    out.push_str(&format!("version: {}\n", yaml::scalar(&fm.version)));
    out.push_str(&format!("trigger: {}\n", yaml::flow_list(&fm.trigger)));
    out.push_str(&format!("dependencies: {}\n", yaml::flow_list(&fm.dependencies)));
    if let Some(tools) = &fm.allowed_tools {
        out.push_str(&format!("allowed-tools: {}\n", yaml::flow_list(tools)));
    }
    if let Some(criteria) = &fm.success_criteria {
        out.push_str(&format!("success-criteria: {}\n", yaml::flow_list(criteria)));
    }
    out.push_str("---\n");
    out
}

pub fn serialize_skill(artifact: &SkillArtifact) -> Result<String, SkillError> {
    let report = validate_skill(artifact);
    if let Some(first) = report.errors.first() {
        return Err(SkillError::InvariantViolation(format!(
            "{}: {}",
            first.code.as_str(),
            first.message
        )));
    }
    let mut out = render_frontmatter(&artifact.frontmatter);
    out.push('\n');
    out.push_str(&normalize_body(&artifact.instructions));
    Ok(out)
}

/// ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    Below,
    Within,
    Above,
}

impl Band {
    pub fn classify(tokens: usize, range: (usize, usize)) -> Self {
        if tokens < range.0 {
            Band::Below
        } else if tokens > range.1 {
            Band::Above
        } else {
            Band::Within
        }
    }
}

pub const LEVEL1_RANGE: (usize, usize) = (30, 100);
pub const LEVEL2_RANGE: (usize, usize) = (200, 5000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureReport {
    pub level1_tokens: usize,
    pub level2_tokens: usize,
    pub level1_band: Band,
    pub level2_band: Band,
}

pub fn disclosure_report(artifact: &SkillArtifact) -> DisclosureReport {
    let level1_tokens = estimate_tokens(&artifact.frontmatter.metadata_text());
    let level2_tokens = estimate_tokens(&artifact.instructions);
    DisclosureReport {
        level1_tokens,
        level2_tokens,
        level1_band: Band::classify(level1_tokens, LEVEL1_RANGE),
        level2_band: Band::classify(level2_tokens, LEVEL2_RANGE),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    NameNotKebabCase,
    EmptyDescription,
    InvalidVersion,
    EmptyTrigger,
    ResourcePathEscape,
    ResourceKindMismatch,
    ResourceUnknownDirectory,
    Level1BelowBudget,
    Level1AboveBudget,
    Level2BelowBudget,
    Level2AboveBudget,
    NoDependencies,
    DescriptionTooLong,
}

impl ValidationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationCode::NameNotKebabCase => "NameNotKebabCase",
            ValidationCode::EmptyDescription => "EmptyDescription",
            ValidationCode::InvalidVersion => "InvalidVersion",
            ValidationCode::EmptyTrigger => "EmptyTrigger",
            ValidationCode::ResourcePathEscape => "ResourcePathEscape",
            ValidationCode::ResourceKindMismatch => "ResourceKindMismatch",
            ValidationCode::ResourceUnknownDirectory => "ResourceUnknownDirectory",
            ValidationCode::Level1BelowBudget => "Level1BelowBudget",
            ValidationCode::Level1AboveBudget => "Level1AboveBudget",
            ValidationCode::Level2BelowBudget => "Level2BelowBudget",
            ValidationCode::Level2AboveBudget => "Level2AboveBudget",
            ValidationCode::NoDependencies => "NoDependencies",
            ValidationCode::DescriptionTooLong => "DescriptionTooLong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: ValidationCode,
    pub message: String,
    pub location: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, code: ValidationCode) -> bool {
        self.errors.iter().chain(&self.warnings).any(|f| f.code == code)
    }

    fn error(&mut self, code: ValidationCode, message: impl Into<String>, location: impl Into<String>) {
        self.errors.push(Finding {
            code,
            message: message.into(),
            location: location.into(),
        });
    }

    fn warn(&mut self, code: ValidationCode, message: impl Into<String>, location: impl Into<String>) {
        self.warnings.push(Finding {
            code,
            message: message.into(),
            location: location.into(),
        });
    }
}

static KEBAB: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[a-z0-9]+(-[a-z0-9]+)*$").unwrap());

pub const DESCRIPTION_WARN_CHARS: usize = 500;

pub fn is_kebab_case(name: &str) -> bool {
    KEBAB.is_match(name)
}

/// Relative, no `..`, no empty or `.` segments, no backslashes.
pub fn resource_path_is_contained(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && !path.contains(':')
        && path.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..")
}

pub fn validate_skill(artifact: &SkillArtifact) -> ValidationReport {
    let fm = &artifact.frontmatter;
    let mut r = ValidationReport::default();
    if !is_kebab_case(&fm.name) {
        r.error(
            ValidationCode::NameNotKebabCase,
            format!("name `{}` is not lowercase hyphen-separated", fm.name),
            "frontmatter.name",
        );
    }
    if fm.description.trim().is_empty() {
        r.error(
            ValidationCode::EmptyDescription,
            "description is empty",
            "frontmatter.description",
        );
    }
    if semver::Version::parse(&fm.version).is_err() {
        r.error(
            ValidationCode::InvalidVersion,
            format!("version `{}` is not MAJOR.MINOR.PATCH", fm.version),
            "frontmatter.version",
        );
    }
    if fm.trigger.is_empty() {
        r.error(
            ValidationCode::EmptyTrigger,
            "trigger list is empty",
            "frontmatter.trigger",
        );
    }
    for (i, t) in fm.trigger.iter().enumerate() {
        if t.trim().is_empty() {
            r.error(
                ValidationCode::EmptyTrigger,
                "trigger entry is blank",
                format!("frontmatter.trigger[{i}]"),
            );
        }
    }
    for res in &artifact.resources {
        let loc = format!("resources/{}", res.path);
        if !resource_path_is_contained(&res.path) {
            r.error(
                ValidationCode::ResourcePathEscape,
                format!("resource path `{}` escapes the skill directory", res.path),
                loc,
            );
            continue;
        }
        match ResourceKind::from_path(&res.path) {
            None => r.error(
                ValidationCode::ResourceUnknownDirectory,
                format!("`{}` is not under scripts/, references/ or templates/", res.path),
                loc,
            ),
            Some(kind) if kind != res.kind => r.error(
                ValidationCode::ResourceKindMismatch,
                format!("`{}` is declared {:?} but lives in {}/", res.path, res.kind, kind.dir()),
                loc,
            ),
            Some(_) => {}
        }
    }

    let d = disclosure_report(artifact);
    match d.level1_band {
        Band::Below => r.warn(
            ValidationCode::Level1BelowBudget,
            format!("metadata is {} tokens, below {}", d.level1_tokens, LEVEL1_RANGE.0),
            "frontmatter",
        ),
        Band::Above => r.warn(
            ValidationCode::Level1AboveBudget,
            format!("metadata is {} tokens, above {}", d.level1_tokens, LEVEL1_RANGE.1),
            "frontmatter",
        ),
        Band::Within => {}
    }
    match d.level2_band {
        Band::Below => r.warn(
            ValidationCode::Level2BelowBudget,
            format!("instructions are {} tokens, below {}", d.level2_tokens, LEVEL2_RANGE.0),
            "body",
        ),
        Band::Above => r.warn(
            ValidationCode::Level2AboveBudget,
            format!("instructions are {} tokens, above {}", d.level2_tokens, LEVEL2_RANGE.1),
            "body",
        ),
        Band::Within => {}
    }
    if fm.dependencies.is_empty() {
        r.warn(
            ValidationCode::NoDependencies,
            "no dependencies declared",
            "frontmatter.dependencies",
        );
    }
    if fm.description.chars().count() > DESCRIPTION_WARN_CHARS {
        r.warn(
            ValidationCode::DescriptionTooLong,
            format!("description exceeds {DESCRIPTION_WARN_CHARS} characters"),
            "frontmatter.description",
        );
    }
    r
}
