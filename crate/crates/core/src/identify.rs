//! Latent-skill identification.
//!
//! Two ranking stages: dense retrieval by cosine similarity between a task
//! embedding and candidate-module embeddings (top-K kept), then pairwise
//! relevance scoring with a promotion threshold τ. Survivors are scored on
//! the four extraction criteria (recurrence, verification, non-obviousness,
//! generalizability).
//!
//! Both the embedder and the pairwise scorer are traits. The built-ins are
//! deterministic: a hashed bag-of-tokens embedder and token-set Jaccard.

use std::cmp::Ordering;
use std::path::PathBuf;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::repo::{FileRole, RepoMap};
use crate::secrets;
use crate::text::{fnv1a64, jaccard, token_set, tokenize};

pub const DEFAULT_DIMS: usize = 256;
pub const MIN_DIMS: usize = 8;
/// Cosine at or above which another module counts as a recurrence.
pub const RECURRENCE_SIMILARITY: f64 = 0.8;
pub const RECURRENCE_CAP: usize = 5;
pub const NON_OBVIOUSNESS_CAP: usize = 10;
/// Excerpts are cut to this many characters before embedding.
pub const MAX_EXCERPT_CHARS: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum IdentifyError {
    #[error("embedding dimensionality must be at least {MIN_DIMS}, got {0}")]
    InvalidDimensions(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNormVector,
    #[error("candidate corpus is empty")]
    EmptyCorpus,
    #[error("task description is empty")]
    EmptyTask,
    #[error("relevance scorer failed: {0}")]
    ScorerFailure(String),
    #[error("candidate {0} has no relevance score")]
    MissingRelevanceScore(String),
    #[error("candidate {0} is not part of the corpus")]
    CandidateNotInCorpus(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        EmbeddingVector { values, norm }
    }

    pub fn zeros(dims: usize) -> Self {
        EmbeddingVector::new(vec![0.0; dims])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

/// Produces embeddings of a fixed dimensionality.
pub trait EmbeddingProvider: Send + Sync {
    fn dims(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, IdentifyError>;
}

/// Feature-hashing embedder: FNV-1a of each token modulo `dims`, counts,
/// L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dims: usize,
}

impl HashedEmbedder {
    pub fn new(dims: usize) -> Result<Self, IdentifyError> {
        if dims < MIN_DIMS {
            return Err(IdentifyError::InvalidDimensions(dims));
        }
        Ok(HashedEmbedder { dims })
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dims: DEFAULT_DIMS }
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, IdentifyError> {
        let mut counts = vec![0.0f64; self.dims];
        for token in tokenize(text) {
            let slot = (fnv1a64(token.as_bytes()) % self.dims as u64) as usize;
            counts[slot] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector::new(counts))
    }
}

/// Embed with the built-in hashed embedder.
pub fn embed_text(text: &str, dims: usize) -> Result<EmbeddingVector, IdentifyError> {
    HashedEmbedder::new(dims)?.embed(text)
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IdentifyError> {
    if a.dims() != b.dims() {
        return Err(IdentifyError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(IdentifyError::ZeroNormVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Cosine, with zero-norm vectors scoring 0 against everything.
pub fn similarity_or_zero(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IdentifyError> {
    match cosine_similarity(a, b) {
        Err(IdentifyError::ZeroNormVector) => Ok(0.0),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub task_id: String,
    pub text: String,
}

impl TaskDescription {
    pub fn new(task_id: impl Into<String>, text: impl Into<String>) -> Result<Self, IdentifyError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(IdentifyError::EmptyTask);
        }
        Ok(TaskDescription {
            task_id: task_id.into(),
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaScores {
    pub recurrence: f64,
    pub verification: f64,
    pub non_obviousness: f64,
    pub generalizability: f64,
    pub aggregate: f64,
}

impl CriteriaScores {
    pub fn from_components(recurrence: f64, verification: f64, non_obviousness: f64, generalizability: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        let (r, v, n, g) = (c(recurrence), c(verification), c(non_obviousness), c(generalizability));
        CriteriaScores {
            recurrence: r,
            verification: v,
            non_obviousness: n,
            generalizability: g,
            aggregate: (r + v + n + g) / 4.0,
        }
    }
}

/// 1-based inclusive line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModule {
    /// `path` for a whole file, `path#symbol@Lstart-Lend` for a function.
    pub module_id: String,
    pub source_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<LineSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub source_excerpt: String,
    #[serde(skip)]
    pub embedding: EmbeddingVector,
    /// Cosine against the task; set by [`retrieve_candidates`].
    pub retrieval_score: f64,
    /// Present once the candidate went through the second stage.
    pub relevance_score: Option<f64>,
    pub criteria: Option<CriteriaScores>,
}

impl CandidateModule {
    pub fn new(
        module_id: impl Into<String>,
        source_path: impl Into<String>,
        excerpt: impl Into<String>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, IdentifyError> {
        let source_excerpt: String = excerpt.into();
        let embedding = provider.embed(&source_excerpt)?;
        Ok(CandidateModule {
            module_id: module_id.into(),
            source_path: source_path.into(),
            symbol: None,
            span: None,
            language: None,
            source_excerpt,
            embedding,
            retrieval_score: 0.0,
            relevance_score: None,
            criteria: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifierConfig {
    pub top_k: usize,
    /// Promotion threshold τ; a candidate must score strictly above it.
    pub relevance_threshold: f64,
    pub embedding_dims: usize,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        IdentifierConfig {
            top_k: 10,
            relevance_threshold: 0.5,
            embedding_dims: DEFAULT_DIMS,
        }
    }
}

static PY_DEF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:async\s+)?def\s+([A-Za-z_]\w*)").unwrap());
static JS_FN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:export\s+)?(?:default\s+)?(?:async\s+)?function\s*\*?\s*([A-Za-z_$][\w$]*)").unwrap()
});
static SH_FN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:function\s+([A-Za-z_][\w-]*)|([A-Za-z_][\w-]*)\s*\(\)\s*\{?)").unwrap());
static RS_FN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:pub(?:\([^)]*\))?\s+)?(?:const\s+)?(?:async\s+)?(?:unsafe\s+)?fn\s+([A-Za-z_]\w*)").unwrap()
});
static GO_FN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^func\s+([A-Za-z_]\w*)").unwrap());
static RB_FN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^def\s+([A-Za-z_]\w*[?!]?)").unwrap());

fn function_regex(language: &str) -> Option<&'static Regex> {
    Some(match language {
        "python" => &PY_DEF,
        "javascript" | "typescript" => &JS_FN,
        "shell" => &SH_FN,
        "rust" => &RS_FN,
        "go" => &GO_FN,
        "ruby" => &RB_FN,
        _ => return None,
    })
}

/// Top-level functions as (name, 1-based inclusive span).
///
/// Heuristic: a function ends at the next column-0 line for indentation
/// languages, at a column-0 `}` for brace languages, and otherwise at the
/// next function header.
pub fn top_level_functions(source: &str, language: &str) -> Vec<(String, LineSpan)> {
    let Some(re) = function_regex(language) else {
        return Vec::new();
    };
    let lines: Vec<&str> = source.lines().collect();
    let indent_based = matches!(language, "python");
    let brace_based = matches!(language, "javascript" | "typescript" | "rust" | "go" | "shell");
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some(caps) = re.captures(lines[i]) else {
            i += 1;
            continue;
        };
        let name = caps
            .iter()
            .skip(1)
            .flatten()
            .next()
            .map(|m| m.as_str().to_string())
            .unwrap_or_default();
        let start = i;
        let mut end = lines.len() - 1;
        for (j, line) in lines.iter().enumerate().skip(i + 1) {
            if re.is_match(line) {
                end = j - 1;
                break;
            }
            if indent_based && !line.trim().is_empty() && !line.starts_with(char::is_whitespace) {
                end = j - 1;
                break;
            }
            if brace_based && line.trim_end() == "}" {
                end = j;
                break;
            }
        }
        while end > start && lines[end].trim().is_empty() {
            end -= 1;
        }
        out.push((
            name,
            LineSpan {
                start: start + 1,
                end: end + 1,
            },
        ));
        i = end + 1;
    }
    out
}

/// Split a scanned repository into candidate modules: one per source file,
/// plus one per top-level function when the language supports the regex
/// segmentation above. Only execution scripts and domain modules qualify.
pub fn segment_modules(map: &RepoMap, provider: &dyn EmbeddingProvider) -> Result<Vec<CandidateModule>, IdentifyError> {
    let sources: Vec<_> = map
        .files
        .iter()
        .filter(|f| matches!(f.role, FileRole::ExecutionScript | FileRole::DomainModule))
        .collect();
    let per_file: Vec<Vec<CandidateModule>> = sources
        .par_iter()
        .map(|file| -> Result<Vec<CandidateModule>, IdentifyError> {
            let abs = map.root_path().join(&file.path);
            let bytes = std::fs::read(&abs).map_err(|e| IdentifyError::Io { path: abs, source: e })?;
            let text: String = String::from_utf8_lossy(&bytes)
                .chars()
                .take(MAX_EXCERPT_CHARS)
                .collect();
            let language = file.language_hint.clone();
            let mut out = Vec::new();
            let mut whole = CandidateModule::new(&file.path, &file.path, text.clone(), provider)?;
            whole.language = language.clone();
            out.push(whole);
            if let Some(lang) = language.as_deref() {
                let lines: Vec<&str> = text.lines().collect();
                for (name, span) in top_level_functions(&text, lang) {
                    let excerpt = lines[span.start - 1..span.end].join("\n");
                    let id = format!("{}#{}@L{}-L{}", file.path, name, span.start, span.end);
                    let mut m = CandidateModule::new(id, &file.path, excerpt, provider)?;
                    m.symbol = Some(name);
                    m.span = Some(span);
                    m.language = language.clone();
                    out.push(m);
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut modules: Vec<CandidateModule> = per_file.into_iter().flatten().collect();
    modules.sort_by(|a, b| a.module_id.cmp(&b.module_id));
    Ok(modules)
}

/// Retrieval order: score descending, then `module_id` ascending.
pub fn retrieval_order(a: &CandidateModule, b: &CandidateModule) -> Ordering {
    b.retrieval_score
        .total_cmp(&a.retrieval_score)
        .then_with(|| a.module_id.cmp(&b.module_id))
}

/// Stage one: keep the `top_k` modules most similar to the task.
///
/// Modules whose embedding has zero norm score 0.
pub fn retrieve_candidates(
    task: &TaskDescription,
    modules: &[CandidateModule],
    config: &IdentifierConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<CandidateModule>, IdentifyError> {
    if modules.is_empty() {
        return Err(IdentifyError::EmptyCorpus);
    }
    let query = provider.embed(&task.text)?;
    if query.norm() == 0.0 {
        return Err(IdentifyError::ZeroNormVector);
    }
    retrieve_with_query(&query, modules, config.top_k)
}

/// Stage one against a precomputed query embedding.
pub fn retrieve_with_query(
    query: &EmbeddingVector,
    modules: &[CandidateModule],
    top_k: usize,
) -> Result<Vec<CandidateModule>, IdentifyError> {
    if modules.is_empty() {
        return Err(IdentifyError::EmptyCorpus);
    }
    let mut scored: Vec<CandidateModule> = modules
        .par_iter()
        .map(|m| {
            let mut m = m.clone();
            m.retrieval_score = similarity_or_zero(query, &m.embedding)?;
            Ok(m)
        })
        .collect::<Result<_, IdentifyError>>()?;
    let k = top_k.max(1).min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, retrieval_order);
        scored.truncate(k);
    }
    scored.sort_by(retrieval_order);
    Ok(scored)
}

/// Stage-two pairwise relevance.
pub trait RelevanceScorer: Send + Sync {
    fn score(&self, task: &str, excerpt: &str) -> Result<f64, IdentifyError>;
}

/// Token-set Jaccard between task text and module excerpt.
#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardScorer;

impl RelevanceScorer for JaccardScorer {
    fn score(&self, task: &str, excerpt: &str) -> Result<f64, IdentifyError> {
        Ok(jaccard(&token_set(task), &token_set(excerpt)))
    }
}

pub fn rank_pair(
    task: &TaskDescription,
    module: &CandidateModule,
    scorer: &dyn RelevanceScorer,
) -> Result<f64, IdentifyError> {
    let s = scorer.score(&task.text, &module.source_excerpt)?;
    if s.is_nan() {
        return Err(IdentifyError::ScorerFailure(format!("{} scored NaN", module.module_id)));
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Outcome of stage two over a retrieved list.
#[derive(Debug, Default)]
pub struct Reranked {
    /// Scored candidates, still in retrieval order.
    pub scored: Vec<CandidateModule>,
    /// (module_id, error message) for candidates the scorer failed on.
    pub failures: Vec<(String, String)>,
}

/// Score every retrieved candidate. Scorer failures drop the candidate and
/// are reported instead of aborting the run.
pub fn rerank(task: &TaskDescription, retrieved: Vec<CandidateModule>, scorer: &dyn RelevanceScorer) -> Reranked {
    let results: Vec<_> = retrieved
        .into_par_iter()
        .map(|mut m| match rank_pair(task, &m, scorer) {
            Ok(s) => {
                m.relevance_score = Some(s);
                Ok(m)
            }
            Err(e) => Err((m.module_id.clone(), e.to_string())),
        })
        .collect();
    let mut out = Reranked::default();
    for r in results {
        match r {
            Ok(m) => out.scored.push(m),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

/// Keep candidates whose relevance strictly exceeds τ, preserving order.
pub fn filter_by_threshold(
    candidates: &[CandidateModule],
    config: &IdentifierConfig,
) -> Result<Vec<CandidateModule>, IdentifyError> {
    let mut out = Vec::new();
    for c in candidates {
        let score = c
            .relevance_score
            .ok_or_else(|| IdentifyError::MissingRelevanceScore(c.module_id.clone()))?;
        if score > config.relevance_threshold {
            out.push(c.clone());
        }
    }
    Ok(out)
}

fn is_comment_line(trimmed: &str) -> bool {
    (trimmed.starts_with('#') && !trimmed.starts_with("#!"))
        || ["//", "/*", "*", "--", "\"\"\"", "'''", "<!--"]
            .iter()
            .any(|p| trimmed.starts_with(p))
}

/// Non-blank lines and how many of them are comments or docstring lines.
pub fn comment_line_counts(excerpt: &str) -> (usize, usize) {
    let mut total = 0;
    let mut comments = 0;
    let mut in_doc: Option<&str> = None;
    for line in excerpt.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        total += 1;
        if let Some(delim) = in_doc {
            comments += 1;
            if t.contains(delim) {
                in_doc = None;
            }
            continue;
        }
        if is_comment_line(t) {
            comments += 1;
            for delim in ["\"\"\"", "'''"] {
                if t.starts_with(delim) && t.matches(delim).count() == 1 {
                    in_doc = Some(delim);
                }
            }
        }
    }
    (total, comments)
}

/// (count of other modules with cosine ≥ 0.8, capped at 5) / 5.
pub fn recurrence_score(candidate: &CandidateModule, corpus: &[CandidateModule]) -> Result<f64, IdentifyError> {
    let mut near = 0usize;
    for other in corpus {
        if other.module_id == candidate.module_id {
            continue;
        }
        if similarity_or_zero(&candidate.embedding, &other.embedding)? >= RECURRENCE_SIMILARITY {
            near += 1;
        }
    }
    Ok(near.min(RECURRENCE_CAP) as f64 / RECURRENCE_CAP as f64)
}

/// Comment and docstring lines over non-blank lines, capped at 1.
pub fn verification_score(excerpt: &str) -> f64 {
    let (total, comments) = comment_line_counts(excerpt);
    if total == 0 {
        0.0
    } else {
        (comments as f64 / total as f64).min(1.0)
    }
}

const FLOW_MARKERS: &[&str] = &[
    "if", "elif", "else", "for", "while", "match", "case", "switch", "try", "except", "catch", "finally", "raise",
    "throw", "assert", "rescue", "ensure", "panic", "break", "continue",
];

/// Control-flow and error-handling markers, capped at 10, divided by 10.
pub fn non_obviousness_score(excerpt: &str) -> f64 {
    let n = tokenize(excerpt)
        .iter()
        .filter(|t| FLOW_MARKERS.contains(&t.as_str()))
        .count();
    n.min(NON_OBVIOUSNESS_CAP) as f64 / NON_OBVIOUSNESS_CAP as f64
}

/// 1 − (non-blank lines holding a hardcoded literal / non-blank lines).
pub fn generalizability_score(excerpt: &str) -> f64 {
    let lines: Vec<&str> = excerpt.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return 1.0;
    }
    let hits = lines.iter().filter(|l| !secrets::find_matches(l).is_empty()).count();
    1.0 - hits as f64 / lines.len() as f64
}

pub fn assess_extraction_criteria(
    candidate: &CandidateModule,
    corpus: &[CandidateModule],
) -> Result<CriteriaScores, IdentifyError> {
    if !corpus.iter().any(|m| m.module_id == candidate.module_id) {
        return Err(IdentifyError::CandidateNotInCorpus(candidate.module_id.clone()));
    }
    Ok(CriteriaScores::from_components(
        recurrence_score(candidate, corpus)?,
        verification_score(&candidate.source_excerpt),
        non_obviousness_score(&candidate.source_excerpt),
        generalizability_score(&candidate.source_excerpt),
    ))
}
