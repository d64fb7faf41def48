//! Filesystem skill registry with a Level-1 metadata index, trigger
//! matching, budgeted activation and resource resolution.
//!
//! Layout: `<root>/<name>/<version>/SKILL.md` plus resource directories,
//! and `<root>/manifest.json` listing every record. Writes go through a
//! lock file and an atomic manifest rename.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::TrustTier;
use crate::skillmd::{
    estimate_tokens, load_skill_dir, resource_path_is_contained, validate_skill, write_skill_into, SkillArtifact,
    SkillError,
};
use crate::text::{jaccard, token_set, tokenize};

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";
pub const DESCRIPTION_MATCH_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("skill fails validation: {0}")]
    ValidationFailed(String),
    #[error("tier {actual:?} is below the required {required:?}")]
    TierTooLow { required: TrustTier, actual: TrustTier },
    #[error("{0} is already registered; versions are immutable")]
    DuplicateVersion(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("activation needs {needed} tokens but only {available} are available")]
    BudgetExceeded { needed: usize, available: usize },
    #[error("budget must be positive")]
    InvalidBudget,
    #[error("`{skill_id}` has no resource `{path}`")]
    UnknownResource { skill_id: String, path: String },
    #[error("resource path `{0}` is rejected")]
    PathRejected(String),
    #[error("`{0}` was not matched by a prior query in this session")]
    NotMatched(String),
    #[error("registry is locked by another writer ({0})")]
    Locked(String),
    #[error("corrupt registry: {0}")]
    Corrupt(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Skill(#[from] SkillError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub skill_id: String,
    pub artifact: SkillArtifact,
    pub tier: TrustTier,
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestEntry {
    skill_id: String,
    name: String,
    version: String,
    tier: TrustTier,
    registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    skills: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub skill_id: String,
    pub name: String,
    pub description: String,
    pub triggers: Vec<String>,
    pub level1_tokens: usize,
    pub tier: TrustTier,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataIndex {
    pub entries: Vec<IndexEntry>,
    pub total_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillMatch {
    pub skill_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPayload {
    pub skill_id: String,
    pub injected_instructions: String,
    pub injected_tokens: usize,
    pub remaining_budget: usize,
}

/// Skill records, optionally backed by a directory.
#[derive(Debug, Default)]
pub struct Registry {
    root: Option<PathBuf>,
    records: BTreeMap<String, SkillRecord>,
}

struct WriteLock(PathBuf);

impl WriteLock {
    fn acquire(root: &Path) -> Result<Self, RegistryError> {
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WriteLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RegistryError::Locked(path.display().to_string()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn parse_version(v: &str) -> Option<semver::Version> {
    semver::Version::parse(v).ok()
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry::default()
    }

    /// Open (or create) a registry rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, RegistryError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let manifest_path = root.join(MANIFEST_FILE);
        let manifest: Manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            serde_json::from_str(&text).map_err(|e| RegistryError::Corrupt(format!("{MANIFEST_FILE}: {e}")))?
        } else {
            Manifest::default()
        };
        let mut records = BTreeMap::new();
        for e in manifest.skills {
            let dir = root.join(&e.name).join(&e.version);
            let artifact = load_skill_dir(&dir)?;
            if artifact.skill_id() != e.skill_id {
                return Err(RegistryError::Corrupt(format!(
                    "{} holds {}, manifest says {}",
                    dir.display(),
                    artifact.skill_id(),
                    e.skill_id
                )));
            }
            records.insert(
                e.skill_id.clone(),
                SkillRecord {
                    skill_id: e.skill_id,
                    artifact,
                    tier: e.tier,
                    registered_at: e.registered_at,
                },
            );
        }
        Ok(Registry {
            root: Some(root.to_path_buf()),
            records,
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, skill_id: &str) -> Option<&SkillRecord> {
        self.records.get(skill_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SkillRecord> {
        self.records.values()
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format: 1,
            skills: self
                .records
                .values()
                .map(|r| ManifestEntry {
                    skill_id: r.skill_id.clone(),
                    name: r.artifact.frontmatter.name.clone(),
                    version: r.artifact.frontmatter.version.clone(),
                    tier: r.tier,
                    registered_at: r.registered_at,
                })
                .collect(),
        }
    }

    fn persist(&self, root: &Path, record: &SkillRecord) -> Result<(), RegistryError> {
        let fm = &record.artifact.frontmatter;
        let name_dir = root.join(&fm.name);
        fs::create_dir_all(&name_dir).map_err(io_err(&name_dir))?;
        let final_dir = name_dir.join(&fm.version);
        let staging = name_dir.join(format!(".{}.staging", fm.version));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        write_skill_into(&record.artifact, &staging)?;
        fs::rename(&staging, &final_dir).map_err(io_err(&final_dir))?;

        let manifest_path = root.join(MANIFEST_FILE);
        let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        fs::write(&tmp, json + "\n").map_err(io_err(&tmp))?;
        fs::rename(&tmp, &manifest_path).map_err(io_err(&manifest_path))?;
        Ok(())
    }

    pub fn register(
        &mut self,
        artifact: SkillArtifact,
        tier: TrustTier,
        min_tier: TrustTier,
    ) -> Result<SkillRecord, RegistryError> {
        let report = validate_skill(&artifact);
        if let Some(first) = report.errors.first() {
            return Err(RegistryError::ValidationFailed(format!(
                "{}: {}",
                first.code.as_str(),
                first.message
            )));
        }
        if tier < min_tier {
            return Err(RegistryError::TierTooLow {
                required: min_tier,
                actual: tier,
            });
        }
        let skill_id = artifact.skill_id();
        let _lock = match &self.root {
            Some(root) => Some(WriteLock::acquire(root)?),
            None => None,
        };
        if let Some(root) = &self.root {
            // Another writer may have committed since this registry was opened.
            let fm = &artifact.frontmatter;
            if root.join(&fm.name).join(&fm.version).exists() {
                return Err(RegistryError::DuplicateVersion(skill_id));
            }
        }
        if self.records.contains_key(&skill_id) {
            return Err(RegistryError::DuplicateVersion(skill_id));
        }
        let record = SkillRecord {
            skill_id: skill_id.clone(),
            artifact,
            tier,
            registered_at: Utc::now(),
        };
        self.records.insert(skill_id.clone(), record.clone());
        if let Some(root) = self.root.clone() {
            if let Err(e) = self.persist(&root, &record) {
                self.records.remove(&skill_id);
                return Err(e);
            }
        }
        Ok(record)
    }

    /// One entry per name, at its highest semver version.
    pub fn build_metadata_index(&self) -> MetadataIndex {
        let mut latest: BTreeMap<&str, &SkillRecord> = BTreeMap::new();
        for r in self.records.values() {
            let name = r.artifact.frontmatter.name.as_str();
            let newer = latest.get(name).is_none_or(|cur| {
                parse_version(&r.artifact.frontmatter.version) > parse_version(&cur.artifact.frontmatter.version)
            });
            if newer {
                latest.insert(name, r);
            }
        }
        let mut entries: Vec<IndexEntry> = latest
            .values()
            .map(|r| {
                let fm = &r.artifact.frontmatter;
                IndexEntry {
                    skill_id: r.skill_id.clone(),
                    name: fm.name.clone(),
                    description: fm.description.clone(),
                    triggers: fm.trigger.clone(),
                    level1_tokens: estimate_tokens(&fm.metadata_text()),
                    tier: r.tier,
                }
            })
            .collect();
        entries.sort_by(|a, b| a.skill_id.cmp(&b.skill_id));
        let total_tokens = entries.iter().map(|e| e.level1_tokens).sum();
        MetadataIndex { entries, total_tokens }
    }

    pub fn activate(&self, skill_id: &str, budget_tokens: usize) -> Result<ActivationPayload, RegistryError> {
        if budget_tokens == 0 {
            return Err(RegistryError::InvalidBudget);
        }
        let record = self
            .get(skill_id)
            .ok_or_else(|| RegistryError::UnknownSkill(skill_id.to_string()))?;
        let body = &record.artifact.instructions;
        let needed = estimate_tokens(body);
        if needed > budget_tokens {
            return Err(RegistryError::BudgetExceeded {
                needed,
                available: budget_tokens,
            });
        }
        Ok(ActivationPayload {
            skill_id: skill_id.to_string(),
            injected_instructions: body.clone(),
            injected_tokens: needed,
            remaining_budget: budget_tokens - needed,
        })
    }

    pub fn resolve_resource(&self, skill_id: &str, resource_path: &str) -> Result<&[u8], RegistryError> {
        let record = self
            .get(skill_id)
            .ok_or_else(|| RegistryError::UnknownSkill(skill_id.to_string()))?;
        if !resource_path_is_contained(resource_path) {
            return Err(RegistryError::PathRejected(resource_path.to_string()));
        }
        record
            .artifact
            .resource(resource_path)
            .map(|r| r.bytes.as_slice())
            .ok_or_else(|| RegistryError::UnknownResource {
                skill_id: skill_id.to_string(),
                path: resource_path.to_string(),
            })
    }
}

fn contains_sequence(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Trigger phrase as a contiguous token run of the query scores 1.0;
/// otherwise description Jaccard at or above 0.3 scores the Jaccard value.
pub fn match_skills(query: &str, index: &MetadataIndex) -> Result<Vec<SkillMatch>, RegistryError> {
    let q_tokens = tokenize(query);
    if q_tokens.is_empty() {
        return Err(RegistryError::EmptyQuery);
    }
    let q_set: BTreeSet<String> = q_tokens.iter().cloned().collect();
    let mut out: Vec<SkillMatch> = index
        .entries
        .iter()
        .filter_map(|e| {
            if e.triggers.iter().any(|t| contains_sequence(&q_tokens, &tokenize(t))) {
                return Some(SkillMatch {
                    skill_id: e.skill_id.clone(),
                    score: 1.0,
                });
            }
            let j = jaccard(&q_set, &token_set(&e.description));
            (j >= DESCRIPTION_MATCH_THRESHOLD).then(|| SkillMatch {
                skill_id: e.skill_id.clone(),
                score: j,
            })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.skill_id.cmp(&b.skill_id)));
    Ok(out)
}

/// Enforces query-before-activation within one agent session.
#[derive(Debug)]
pub struct Session<'r> {
    registry: &'r Registry,
    index: MetadataIndex,
    matched: BTreeSet<String>,
    budget: usize,
}

impl<'r> Session<'r> {
    pub fn new(registry: &'r Registry, budget_tokens: usize) -> Self {
        Session {
            registry,
            index: registry.build_metadata_index(),
            matched: BTreeSet::new(),
            budget: budget_tokens,
        }
    }

    pub fn index(&self) -> &MetadataIndex {
        &self.index
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget
    }

    pub fn query(&mut self, query: &str) -> Result<Vec<SkillMatch>, RegistryError> {
        let matches = match_skills(query, &self.index)?;
        self.matched.extend(matches.iter().map(|m| m.skill_id.clone()));
        Ok(matches)
    }

    pub fn activate(&mut self, skill_id: &str) -> Result<ActivationPayload, RegistryError> {
        if !self.matched.contains(skill_id) {
            return Err(RegistryError::NotMatched(skill_id.to_string()));
        }
        let payload = self.registry.activate(skill_id, self.budget)?;
        self.budget = payload.remaining_budget;
        Ok(payload)
    }

    pub fn resolve(&self, skill_id: &str, path: &str) -> Result<&'r [u8], RegistryError> {
        if !self.matched.contains(skill_id) {
            return Err(RegistryError::NotMatched(skill_id.to_string()));
        }
        self.registry.resolve_resource(skill_id, path)
    }
}
