//! Configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use skillsmith_core::PipelineConfig;

use crate::args::GlobalArgs;

pub const DEFAULT_CONFIG_FILE: &str = "skillsmith.toml";

pub fn load(global: &GlobalArgs) -> Result<PipelineConfig> {
    let path = match &global.config {
        Some(p) => Some(p.clone()),
        None => Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.is_file()),
    };
    let mut config = match path {
        Some(p) => from_file(&p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &global.policy {
        config.gates.policy = Some(p.clone());
    }
    if let Some(r) = &global.registry {
        config.registry.root = Some(r.clone());
    }
    if let Some(s) = &global.sandbox {
        config.gates.sandbox = Some(s.split_whitespace().map(str::to_string).collect());
    }
    Ok(config)
}

pub fn from_file(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use skillsmith_core::TrustTier;

    #[test]
    fn partial_files_keep_defaults() {
        let c: PipelineConfig = toml::from_str("[identifier]\nrelevance_threshold = 0.1\n").unwrap();
        assert_eq!(c.identifier.relevance_threshold, 0.1);
        assert_eq!(c.identifier.top_k, 10);
        assert_eq!(c.critic.overlap_threshold, 0.25);
        assert_eq!(c.registry.min_tier, TrustTier::T2);
        let empty: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(empty, PipelineConfig::default());
        assert!(toml::from_str::<PipelineConfig>("[nope]\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "[registry]\nroot = \"/from/file\"\n[gates]\nsandbox = [\"a\"]\n").unwrap();
        let global = GlobalArgs {
            config: Some(file),
            policy: None,
            registry: Some("/from/flag".into()),
            sandbox: None,
            verbose: 0,
        };
        let c = load(&global).unwrap();
        assert_eq!(c.registry.root.as_deref(), Some(Path::new("/from/flag")));
        assert_eq!(c.gates.sandbox, Some(vec!["a".to_string()]));
    }
}
