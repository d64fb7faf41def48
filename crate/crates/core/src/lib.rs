//! Core library for mining reusable agent skills out of source repositories.
//!
//! The crate is organised along the life cycle of a skill:
//!
//! 1. [`repo`] walks a local checkout and builds a [`repo::RepoMap`] plus a
//!    budgeted Markdown context document.
//! 2. [`identify`] segments the repository into candidate modules, ranks them
//!    against a task description (dense retrieval, then pairwise relevance),
//!    and scores the survivors on the four extraction criteria.
//! 3. [`synth`] turns a promoted candidate into a [`skillmd::SkillArtifact`]:
//!    frontmatter, Level-2 instructions and sanitized Level-3 resources.
//! 4. [`skillmd`] parses, serializes and validates the `SKILL.md` format and
//!    accounts tokens per disclosure level.
//! 5. [`gates`] runs the G1–G4 verification pipeline and derives a trust tier.
//! 6. [`registry`] stores verified skills, serves the Level-1 index and does
//!    budgeted activation and resource resolution.
//! 7. [`graph`] keeps typed relations between skills for redundancy detection
//!    and composition planning.
//! 8. [`critic`] is the deterministic grid geometry behind the layout critic
//!    skill.
//!
//! [`pipeline`] wires stages 1–5 together for the `extract` command.

pub mod critic;
pub mod gates;
pub mod graph;
pub mod identify;
pub mod pipeline;
pub mod registry;
pub mod repo;
pub mod secrets;
pub mod skillmd;
pub mod synth;
pub mod text;

pub use critic::{CriticConfig, Element, ElementKind, Frame, Suggestion};
pub use gates::{Gate, GateReport, GateVerdict, Severity, TrustTier};
pub use graph::{CompositionPlan, RelationKind, SkillGraph};
pub use identify::{CandidateModule, EmbeddingVector, IdentifierConfig, TaskDescription};
pub use pipeline::{ExtractReport, PipelineConfig};
pub use registry::{MetadataIndex, Registry, SkillRecord};
pub use repo::{FileEntry, FileRole, RepoMap, ScanConfig};
pub use skillmd::{Frontmatter, ResourceKind, ResourceRef, SkillArtifact};
