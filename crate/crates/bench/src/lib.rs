//! Deterministic inputs for the criterion benches.

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use skillsmith_core::identify::{CandidateModule, HashedEmbedder, IdentifyError};
use skillsmith_core::skillmd::{Frontmatter, ResourceRef, SkillArtifact};

const WORDS: &[&str] = &[
    "render",
    "scene",
    "theorem",
    "proof",
    "axis",
    "label",
    "frame",
    "video",
    "parse",
    "token",
    "graph",
    "plan",
    "layout",
    "grid",
    "overlap",
    "narration",
    "storyboard",
    "template",
    "manifest",
    "sandbox",
];

/// `n` space-joined vocabulary words, fixed per seed.
fn words(seed: u64, n: usize) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| *WORDS.choose(&mut rng).expect("non-empty vocabulary"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn module_corpus(n: usize, embedder: &HashedEmbedder) -> Result<Vec<CandidateModule>, IdentifyError> {
    (0..n)
        .map(|i| {
            CandidateModule::new(
                format!("m{i:05}"),
                format!("src/m{i}.py"),
                words(i as u64, 40),
                embedder,
            )
        })
        .collect()
}

pub fn script_artifact(lines: usize) -> SkillArtifact {
    let script: String = (0..lines)
        .map(|i| {
            format!(
                "result_{i} = transform(\"{}\", retries={})\n",
                words(i as u64, 6),
                i % 7
            )
        })
        .collect();
    SkillArtifact {
        frontmatter: Frontmatter {
            name: "bench-skill".into(),
            description: "Benchmark skill with one large script".into(),
            version: "1.0.0".into(),
            trigger: vec!["bench".into()],
            dependencies: vec![],
            allowed_tools: Some(vec!["python".into()]),
            success_criteria: None,
        },
        instructions: format!("# Bench\n\n{}\n", words(7, 400)),
        resources: vec![ResourceRef::new("scripts/run.py", script.into_bytes()).expect("valid resource path")],
    }
}
