use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skillsmith_core::graph::RelationKind;
use skillsmith_core::TrustTier;

#[derive(Debug, Parser)]
#[command(name = "skillsmith", version, about = "Mine, verify and serve agent skills")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file. Defaults to ./skillsmith.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON gate rule table replacing the built-in policy.
    #[arg(long, global = true)]
    pub policy: Option<PathBuf>,
    /// Registry directory.
    #[arg(long, global = true, env = "SKILLSMITH_REGISTRY")]
    pub registry: Option<PathBuf>,
    /// Sandbox command for G3 (`dry-run` inspects scripts without running them).
    #[arg(long, global = true)]
    pub sandbox: Option<String>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine a repository for a task and write the synthesized skill.
    Extract {
        repo: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "skills-out")]
        out: PathBuf,
        /// Relevance threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Parse and validate a skill directory.
    Validate { skill_dir: PathBuf },
    /// Run the verification gates over a skill directory.
    Scan { skill_dir: PathBuf },
    /// Verify a skill and add it to the registry.
    Register {
        skill_dir: PathBuf,
        #[arg(long, value_parser = parse_tier)]
        min_tier: Option<TrustTier>,
    },
    /// Match a request against the registry's metadata index.
    Query { text: String },
    /// Match, then load a skill's instructions within a token budget.
    Activate {
        skill_id: String,
        #[arg(long)]
        query: String,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Fetch one bundled resource of a registered skill.
    Resource { skill_id: String, path: String },
    /// Maintain and query the skill relation graph.
    Graph(GraphArgs),
    /// Grid overlap critique of a JSON scene description.
    Critic {
        scene: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// G1 summary and vulnerability rate over directories of skills.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Graph file. Defaults to `<registry>/graph.json`.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[command(subcommand)]
    pub action: GraphAction,
}

#[derive(Debug, Subcommand)]
pub enum GraphAction {
    /// Add a typed relation, creating missing nodes.
    Add {
        from: String,
        relation: Relation,
        to: String,
    },
    /// Report unknown nodes, self edges and cycles.
    Check,
    /// Order the skills needed for the given goals.
    Plan {
        #[arg(required = true)]
        goals: Vec<String>,
    },
    /// Pairs of near-duplicate skills.
    Redundancy {
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Relation {
    IsSubsetOf,
    RequiresOutputFrom,
}

impl From<Relation> for RelationKind {
    fn from(r: Relation) -> Self {
        match r {
            Relation::IsSubsetOf => RelationKind::IsSubsetOf,
            Relation::RequiresOutputFrom => RelationKind::RequiresOutputFrom,
        }
    }
}

fn parse_tier(s: &str) -> Result<TrustTier, String> {
    let level = s
        .trim_start_matches(['T', 't'])
        .parse::<usize>()
        .ok()
        .filter(|l| *l <= 4)
        .ok_or_else(|| format!("expected T0..T4, got `{s}`"))?;
    Ok(TrustTier::from_level(level))
}
