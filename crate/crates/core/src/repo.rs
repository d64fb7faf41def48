//! Repository structural analysis.
//!
//! [`scan_repository`] walks a local checkout and produces a [`RepoMap`]: one
//! [`FileEntry`] per kept file with its size, a [`FileRole`] from a fixed rule
//! table, a language hint and a bounded text preview.
//! [`render_context_markdown`] turns the map into a Markdown document that
//! opens with the directory tree and then lists fenced previews, shrinking
//! itself to fit a character budget.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use globset::{Glob, GlobSet, GlobSetBuilder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

/// Bytes inspected for a NUL byte when deciding whether a file is binary.
pub const BINARY_SNIFF_BYTES: usize = 8 * 1024;

/// Smallest budget accepted by [`render_context_markdown`].
pub const MIN_CONTEXT_BUDGET: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum RepoError {
    #[error("repository root not found: {0}")]
    RootNotFound(PathBuf),
    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("i/o failure at {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid ignore glob {glob:?}: {detail}")]
    InvalidGlob { glob: String, detail: String },
    #[error("context budget {0} is below the minimum of {MIN_CONTEXT_BUDGET} characters")]
    BudgetTooSmall(usize),
}

impl RepoError {
    /// Stable variant name used in machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            RepoError::RootNotFound(_) => "RootNotFound",
            RepoError::NotADirectory(_) => "NotADirectory",
            RepoError::IoFailure { .. } => "IoFailure",
            RepoError::InvalidGlob { .. } => "InvalidGlob",
            RepoError::BudgetTooSmall(_) => "BudgetTooSmall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FileRole {
    ExecutionScript,
    Configuration,
    DomainModule,
    Documentation,
    Asset,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub size_bytes: u64,
    pub role: FileRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_hint: Option<String>,
    /// Leading characters of the file; empty for binary files.
    pub preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoMap {
    pub root: String,
    /// Sorted by path.
    pub files: Vec<FileEntry>,
    pub generated_at: DateTime<Utc>,
    pub total_bytes: u64,
}

impl RepoMap {
    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files
            .binary_search_by(|f| f.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.files[i])
    }

    /// Equality ignoring `generated_at`.
    pub fn same_content(&self, other: &RepoMap) -> bool {
        self.root == other.root && self.files == other.files && self.total_bytes == other.total_bytes
    }

    pub fn root_path(&self) -> &Path {
        Path::new(&self.root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RepoMap serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Globs (relative, forward-slash paths) excluded from the scan.
    pub ignore: Vec<String>,
    pub preview_chars: usize,
    /// Binary files larger than this are dropped from the map.
    pub max_binary_bytes: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            ignore: [".git", ".hg", ".svn", ".bzr"]
                .iter()
                .flat_map(|d| {
                    [
                        d.to_string(),
                        format!("{d}/**"),
                        format!("**/{d}"),
                        format!("**/{d}/**"),
                    ]
                })
                .collect(),
            preview_chars: 2000,
            max_binary_bytes: 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub markdown: String,
    pub included_files: Vec<String>,
    pub truncated: bool,
}

fn build_ignore_set(globs: &[String]) -> Result<GlobSet, RepoError> {
    let mut builder = GlobSetBuilder::new();
    for g in globs {
        let glob = Glob::new(g).map_err(|e| RepoError::InvalidGlob {
            glob: g.clone(),
            detail: e.to_string(),
        })?;
        builder.add(glob);
    }
    builder.build().map_err(|e| RepoError::InvalidGlob {
        glob: globs.join(","),
        detail: e.to_string(),
    })
}

fn relative_slash_path(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let mut parts = Vec::new();
    for comp in rel.components() {
        match comp {
            std::path::Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            _ => return None,
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("/"))
    }
}

struct Sniffed {
    binary: bool,
    preview: String,
}

fn sniff(path: &Path, preview_chars: usize) -> std::io::Result<Sniffed> {
    // Enough bytes for the NUL check and for `preview_chars` of 4-byte UTF-8.
    let limit = BINARY_SNIFF_BYTES.max(preview_chars.saturating_mul(4) + 4);
    let mut buf = Vec::with_capacity(limit.min(64 * 1024));
    File::open(path)?.take(limit as u64).read_to_end(&mut buf)?;
    let head = &buf[..buf.len().min(BINARY_SNIFF_BYTES)];
    if head.contains(&0) {
        return Ok(Sniffed {
            binary: true,
            preview: String::new(),
        });
    }
    let text = String::from_utf8_lossy(&buf);
    Ok(Sniffed {
        binary: false,
        preview: text.chars().take(preview_chars).collect(),
    })
}

/// Walk `root` and build its [`RepoMap`].
///
/// Symlinks are not followed. Files are read in parallel; the map is sorted
/// by path so repeated scans of an unchanged tree compare equal.
pub fn scan_repository(root: &Path, config: &ScanConfig) -> Result<RepoMap, RepoError> {
    let meta = std::fs::metadata(root).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RepoError::RootNotFound(root.to_path_buf()),
        _ => RepoError::IoFailure {
            path: root.to_path_buf(),
            source: e,
        },
    })?;
    if !meta.is_dir() {
        return Err(RepoError::NotADirectory(root.to_path_buf()));
    }
    let ignore = build_ignore_set(&config.ignore)?;

    let mut candidates: Vec<(String, PathBuf, u64)> = Vec::new();
    let walker = WalkDir::new(root).follow_links(false).into_iter();
    let walker = walker.filter_entry(|e| match relative_slash_path(root, e.path()) {
        Some(rel) => !ignore.is_match(&rel),
        None => true,
    });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            RepoError::IoFailure {
                path,
                source: e
                    .into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("walk failure")),
            }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let Some(rel) = relative_slash_path(root, entry.path()) else {
            continue;
        };
        let size = entry
            .metadata()
            .map_err(|e| RepoError::IoFailure {
                path: entry.path().to_path_buf(),
                source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("metadata")),
            })?
            .len();
        candidates.push((rel, entry.into_path(), size));
    }

    let mut files: Vec<FileEntry> = candidates
        .par_iter()
        .map(|(rel, abs, size)| -> Result<Option<FileEntry>, RepoError> {
            let sniffed = sniff(abs, config.preview_chars).map_err(|e| RepoError::IoFailure {
                path: abs.clone(),
                source: e,
            })?;
            if sniffed.binary && *size > config.max_binary_bytes {
                return Ok(None);
            }
            Ok(Some(FileEntry {
                role: classify_file(rel, &sniffed.preview),
                language_hint: language_hint(rel).map(str::to_string),
                path: rel.clone(),
                size_bytes: *size,
                preview: sniffed.preview,
            }))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    files.dedup_by(|a, b| a.path == b.path);

    let total_bytes = files.iter().map(|f| f.size_bytes).sum();
    Ok(RepoMap {
        root: root.to_string_lossy().into_owned(),
        files,
        generated_at: Utc::now(),
        total_bytes,
    })
}

fn extension(path: &str) -> Option<String> {
    let name = path.rsplit('/').next()?;
    let (stem, ext) = name.rsplit_once('.')?;
    if stem.is_empty() {
        return None;
    }
    Some(ext.to_ascii_lowercase())
}

fn file_stem(path: &str) -> &str {
    let name = path.rsplit('/').next().unwrap_or(path);
    match name.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem,
        _ => name,
    }
}

const DOC_EXT: &[&str] = &["md", "markdown", "rst"];
const CONFIG_EXT: &[&str] = &["yaml", "yml", "toml", "json", "ini"];
const SCRIPT_EXT: &[&str] = &[
    "py", "sh", "bash", "zsh", "js", "mjs", "cjs", "ts", "rb", "pl", "php", "lua", "r", "ps1",
];
const SOURCE_EXT: &[&str] = &[
    "rs", "go", "java", "kt", "scala", "swift", "c", "h", "cc", "cpp", "hpp", "cs", "jl", "m", "ex", "exs", "hs", "ml",
    "clj", "dart", "tsx", "jsx", "vue",
];
const ASSET_EXT: &[&str] = &[
    "png", "jpg", "jpeg", "gif", "bmp", "svg", "webp", "ico", "tiff", "mp4", "mov", "avi", "mkv", "webm", "ttf", "otf",
    "woff", "woff2",
];
const ENTRY_MARKERS: &[&str] = &[
    "if __name__ == \"__main__\"",
    "if __name__ == '__main__'",
    "require.main === module",
];

/// Deterministic role assignment.
///
/// Rules are applied in order: asset extension, documentation
/// (`*.md`, `*.rst`, `docs/**`), configuration (config extensions or a path
/// mentioning `prompt`/`config`), execution script (script extension plus a
/// `main`/`run*`/`generate*` file name or an entry-point marker), domain
/// module (any other source file), then [`FileRole::Other`].
pub fn classify_file(path: &str, content_preview: &str) -> FileRole {
    let ext = extension(path);
    let ext = ext.as_deref();
    let lower = path.to_ascii_lowercase();
    let is = |set: &[&str]| ext.is_some_and(|e| set.contains(&e));

    if is(ASSET_EXT) {
        return FileRole::Asset;
    }
    if is(DOC_EXT) || lower.starts_with("docs/") {
        return FileRole::Documentation;
    }
    if is(CONFIG_EXT) || lower.contains("prompt") || lower.contains("config") {
        return FileRole::Configuration;
    }
    let shebang = content_preview.starts_with("#!");
    if is(SCRIPT_EXT) || (ext.is_none() && shebang) {
        let stem = file_stem(&lower);
        let named_entry = stem == "main" || stem.starts_with("run") || stem.starts_with("generate");
        let marked = shebang || ENTRY_MARKERS.iter().any(|m| content_preview.contains(m));
        return if named_entry || marked {
            FileRole::ExecutionScript
        } else {
            FileRole::DomainModule
        };
    }
    if is(SOURCE_EXT) {
        return FileRole::DomainModule;
    }
    FileRole::Other
}

pub fn language_hint(path: &str) -> Option<&'static str> {
    let lang = match extension(path)?.as_str() {
        "py" => "python",
        "sh" | "bash" | "zsh" => "shell",
        "js" | "mjs" | "cjs" | "jsx" => "javascript",
        "ts" | "tsx" => "typescript",
        "rb" => "ruby",
        "pl" => "perl",
        "php" => "php",
        "lua" => "lua",
        "r" => "r",
        "ps1" => "powershell",
        "rs" => "rust",
        "go" => "go",
        "java" => "java",
        "kt" => "kotlin",
        "scala" => "scala",
        "swift" => "swift",
        "c" | "h" => "c",
        "cc" | "cpp" | "hpp" => "cpp",
        "cs" => "csharp",
        "jl" => "julia",
        "md" | "markdown" => "markdown",
        "rst" => "rst",
        "yaml" | "yml" => "yaml",
        "toml" => "toml",
        "json" => "json",
        "ini" => "ini",
        _ => return None,
    };
    Some(lang)
}

#[derive(Default)]
struct DirNode {
    dirs: BTreeMap<String, DirNode>,
    files: Vec<String>,
}

impl DirNode {
    fn insert(&mut self, path: &str) {
        let mut node = self;
        let mut parts = path.split('/').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.files.push(part.to_string());
            } else {
                node = node.dirs.entry(part.to_string()).or_default();
            }
        }
    }

    /// Pre-order list of (depth, label) for every node below
    /// this one. Directories come before files at each level.
    fn flatten(&self, depth: usize, out: &mut Vec<(usize, String)>) {
        for (name, child) in &self.dirs {
            out.push((depth, format!("{name}/")));
            child.flatten(depth + 1, out);
        }
        let mut files = self.files.clone();
        files.sort();
        for f in files {
            out.push((depth, f));
        }
    }
}

/// Render a pre-order node list as a box-drawing tree.
fn render_tree(root_label: &str, nodes: &[(usize, String)], elided: usize) -> String {
    // last[i]: no later sibling at the same depth before the parent closes.
    let mut last = vec![true; nodes.len()];
    let mut sibling_below: Vec<bool> = Vec::new();
    for (i, (depth, _)) in nodes.iter().enumerate().rev() {
        sibling_below.resize(*depth + 1, false);
        last[i] = !sibling_below[*depth];
        sibling_below[*depth] = true;
    }
    let mut out = String::new();
    out.push_str(root_label);
    out.push('\n');
    let mut open: Vec<bool> = Vec::new();
    for (i, (depth, label)) in nodes.iter().enumerate() {
        open.truncate(*depth);
        for more in &open {
            out.push_str(if *more { "│   " } else { "    " });
        }
        out.push_str(if last[i] { "└── " } else { "├── " });
        out.push_str(label);
        out.push('\n');
        open.push(!last[i]);
    }
    if elided > 0 {
        let _ = writeln!(out, "… {elided} more entries elided");
    }
    out
}

fn fence_for(content: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in content.chars() {
        if c == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

fn file_section(entry: &FileEntry) -> String {
    let fence = fence_for(&entry.preview);
    let mut body = entry.preview.clone();
    if !body.ends_with('\n') {
        body.push('\n');
    }
    format!("\n{fence}{}\n{body}{fence}\n", entry.path)
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Markdown context document for an extraction agent.
///
/// Layout: a `## Directory tree` section with a fenced tree, then a
/// `## File previews` section with one fenced block per file, the info
/// string of each fence being the file path. When the document exceeds
/// `char_budget` characters, previews are dropped largest first, and if that
/// is not enough tree leaves are elided from the end; the tree root always
/// stays.
pub fn render_context_markdown(map: &RepoMap, char_budget: usize) -> Result<ContextDocument, RepoError> {
    if char_budget < MIN_CONTEXT_BUDGET {
        return Err(RepoError::BudgetTooSmall(char_budget));
    }
    let root_name = Path::new(&map.root)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| ".".to_string());
    let root_label: String = format!("{}/", root_name.chars().take(200).collect::<String>());

    let mut tree = DirNode::default();
    for f in &map.files {
        tree.insert(&f.path);
    }
    let mut nodes = Vec::new();
    tree.flatten(0, &mut nodes);

    let mut previews: Vec<(&FileEntry, String)> = map
        .files
        .iter()
        .filter(|f| !f.preview.is_empty())
        .map(|f| (f, file_section(f)))
        .collect();

    let assemble = |tree_text: &str, previews: &[(&FileEntry, String)]| {
        let mut md = format!("## Directory tree\n\n```text\n{tree_text}```\n");
        if !previews.is_empty() {
            md.push_str("\n## File previews\n");
            for (_, section) in previews {
                md.push_str(section);
            }
        }
        md
    };

    let mut truncated = false;
    let tree_text = render_tree(&root_label, &nodes, 0);
    let mut markdown = assemble(&tree_text, &previews);

    while char_len(&markdown) > char_budget && !previews.is_empty() {
        let victim = previews
            .iter()
            .enumerate()
            .max_by(|(_, (fa, sa)), (_, (fb, sb))| char_len(sa).cmp(&char_len(sb)).then_with(|| fb.path.cmp(&fa.path)))
            .map(|(i, _)| i)
            .expect("non-empty");
        previews.remove(victim);
        truncated = true;
        markdown = assemble(&tree_text, &previews);
    }

    if char_len(&markdown) > char_budget {
        // Dropping the final pre-order node always removes a leaf, so keeping
        // a prefix of `nodes` elides leaves. Below the full tree, length is
        // monotone in the prefix size: binary search the longest prefix that fits.
        truncated = true;
        let render = |kept: usize| assemble(&render_tree(&root_label, &nodes[..kept], nodes.len() - kept), &previews);
        let (mut lo, mut hi) = (0usize, nodes.len().saturating_sub(1));
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if char_len(&render(mid)) <= char_budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        markdown = render(lo);
    }

    let mut included_files: Vec<String> = previews.iter().map(|(f, _)| f.path.clone()).collect();
    included_files.sort();
    Ok(ContextDocument {
        markdown,
        included_files,
        truncated,
    })
}
