//! Generators shared by the property suites.
#![allow(dead_code)]

use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;
use skillsmith_core::skillmd::{Frontmatter, SkillArtifact};

pub fn kebab_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,8}(-[a-z0-9]{1,6}){0,3}"
}

/// Free text mixing YAML-significant characters, escapes and non-ASCII.
pub fn yaml_text() -> impl Strategy<Value = String> {
    let ch = prop_oneof![
        6 => proptest::char::range('a', 'z'),
        2 => Just(' '),
        1 => proptest::sample::select(vec![
            ':', '#', '\'', '"', '\\', '-', '[', ']', '{', '}', ',', '&', '*', '!', '|', '>', '%', '@', '`', '?',
            '\t', '\n', '\r', 'é', '→', '中', '0', '9', '.',
        ]),
    ];
    ("[A-Za-z]", vec(ch, 0..60)).prop_map(|(head, rest)| {
        let mut s = head;
        s.extend(rest);
        s
    })
}

pub fn version() -> impl Strategy<Value = String> {
    (
        "[0-9]{1,3}",
        "[0-9]{1,3}",
        "[0-9]{1,3}",
        option::of("[a-z][a-z0-9]{0,5}"),
    )
        .prop_map(|(a, b, c, pre)| {
            let n = |s: String| s.trim_start_matches('0').to_string();
            let part = |s: String| if n(s.clone()).is_empty() { "0".to_string() } else { n(s) };
            match pre {
                Some(p) => format!("{}.{}.{}-{p}", part(a), part(b), part(c)),
                None => format!("{}.{}.{}", part(a), part(b), part(c)),
            }
        })
}

/// Markdown-ish body lines, including blank lines and delimiter lookalikes.
pub fn body() -> impl Strategy<Value = String> {
    let line = prop_oneof![
        4 => "[A-Za-z0-9 #*`:.,-]{0,40}",
        1 => Just(String::new()),
        1 => Just("---".to_string()),
        1 => Just("  - item: value".to_string()),
    ];
    vec(line, 0..12).prop_map(|lines| {
        let joined = lines.join("\n");
        let trimmed = joined.trim_end_matches('\n');
        if trimmed.is_empty() {
            String::new()
        } else {
            format!("{trimmed}\n")
        }
    })
}

pub fn frontmatter() -> impl Strategy<Value = Frontmatter> {
    (
        kebab_name(),
        yaml_text(),
        version(),
        vec(yaml_text(), 1..4),
        vec(yaml_text(), 0..4),
        option::of(vec("[a-z][a-z0-9_-]{0,8}", 0..4)),
        option::of(vec(yaml_text(), 0..3)),
    )
        .prop_map(
            |(name, description, version, trigger, dependencies, allowed_tools, success_criteria)| Frontmatter {
                name,
                description,
                version,
                trigger,
                dependencies,
                allowed_tools,
                success_criteria,
            },
        )
}

pub fn artifact() -> impl Strategy<Value = SkillArtifact> {
    (frontmatter(), body()).prop_map(|(frontmatter, instructions)| SkillArtifact {
        frontmatter,
        instructions,
        resources: Vec::new(),
    })
}

pub fn minimal_artifact(name: &str, body: &str) -> SkillArtifact {
    SkillArtifact {
        frontmatter: Frontmatter {
            name: name.into(),
            description: "test skill".into(),
            version: "1.0.0".into(),
            trigger: vec!["test".into()],
            dependencies: vec![],
            allowed_tools: None,
            success_criteria: None,
        },
        instructions: body.into(),
        resources: Vec::new(),
    }
}
