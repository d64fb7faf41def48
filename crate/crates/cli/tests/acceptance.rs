//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod support;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use skillsmith_core::critic::{critique_layout, map_to_grid, overlap_score, CriticConfig, Element, ElementKind, Frame};
use skillsmith_core::gates::{
    assign_trust_tier, g1_static_scan, vulnerability_rate, CompiledPolicy, Gate, GateReport, GateVerdict, Severity,
    TrustTier,
};
use skillsmith_core::graph::{compose_plan, detect_redundancy, GraphError, RelationKind, SkillGraph};
use skillsmith_core::identify::{
    cosine_similarity, retrieve_candidates, retrieve_with_query, CandidateModule, EmbeddingProvider, EmbeddingVector,
    HashedEmbedder, IdentifierConfig, TaskDescription,
};
use skillsmith_core::secrets::find_credentials;
use skillsmith_core::skillmd::{
    load_skill_dir, parse_skill, serialize_skill, Band, Frontmatter, ResourceRef, SkillArtifact, LEVEL1_RANGE,
    LEVEL2_RANGE,
};
use skillsmith_core::synth::sanitize_content;
use support::{arg, fixtures, mock_sandbox, skillsmith};

type Check = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Check>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure!(elapsed < limit, "took {elapsed:?}, limit {limit:?}");
    Ok(String::new())
}

// ---------------------------------------------------------------- generators

fn pick_char(rng: &mut StdRng) -> char {
    const SPECIAL: &[char] = &[
        ':', '#', '\'', '"', '\\', '-', '[', ']', '{', '}', ',', '&', '*', '!', '|', '>', '%', '@', '`', '?', '\t',
        '\n', '\r', 'é', '→', '中', '0', '9', '.',
    ];
    match rng.random_range(0..9) {
        0..=5 => rng.random_range('a'..='z'),
        6 | 7 => ' ',
        _ => *SPECIAL.choose(rng).unwrap(),
    }
}

fn free_text(rng: &mut StdRng) -> String {
    let mut s = String::from(rng.random_range('A'..='Z'));
    for _ in 0..rng.random_range(0..60) {
        s.push(pick_char(rng));
    }
    s
}

fn ident(rng: &mut StdRng, max: usize) -> String {
    let mut s = String::from(rng.random_range('a'..='z'));
    for _ in 0..rng.random_range(0..=max) {
        s.push(*b"abcdefghijklmnopqrstuvwxyz0123456789".choose(rng).unwrap() as char);
    }
    s
}

fn list<T>(rng: &mut StdRng, lo: usize, hi: usize, mut f: impl FnMut(&mut StdRng) -> T) -> Vec<T> {
    let n = rng.random_range(lo..hi);
    (0..n).map(|_| f(rng)).collect()
}

fn random_artifact(rng: &mut StdRng) -> SkillArtifact {
    let name = std::iter::once(ident(rng, 8))
        .chain(list(rng, 0, 4, |r| ident(r, 5)))
        .collect::<Vec<_>>()
        .join("-");
    let mut version = format!(
        "{}.{}.{}",
        rng.random_range(0..1000),
        rng.random_range(0..1000),
        rng.random_range(0..1000)
    );
    if rng.random_bool(0.3) {
        version = format!("{version}-{}", ident(rng, 5));
    }
    let lines = list(rng, 0, 12, |r| match r.random_range(0..7) {
        0 => String::new(),
        1 => "---".to_string(),
        2 => "  - item: value".to_string(),
        _ => {
            let n = r.random_range(0..40);
            (0..n)
                .map(|_| *b"abcXYZ019 #*`:.,-".choose(r).unwrap() as char)
                .collect()
        }
    });
    let body = lines.join("\n");
    let body = body.trim_end_matches('\n');
    SkillArtifact {
        frontmatter: Frontmatter {
            name,
            description: free_text(rng),
            version,
            trigger: list(rng, 1, 4, free_text),
            dependencies: list(rng, 0, 4, free_text),
            allowed_tools: rng.random_bool(0.5).then(|| list(rng, 0, 4, |r| ident(r, 8))),
            success_criteria: rng.random_bool(0.5).then(|| list(rng, 0, 3, free_text)),
        },
        instructions: if body.is_empty() {
            String::new()
        } else {
            format!("{body}\n")
        },
        resources: Vec::new(),
    }
}

fn dense(rng: &mut StdRng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| rng.random_range(-10.0..10.0)).collect()
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

// ---------------------------------------------------------------- criteria

fn format_round_trip() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    for case in 0..1000 {
        let a = random_artifact(&mut rng);
        let text = serialize_skill(&a).map_err(|e| format!("case {case}: serialize: {e}"))?;
        let back = parse_skill(&text).map_err(|e| format!("case {case}: parse: {e}\n{text}"))?;
        ensure!(back == a, "case {case}: round trip differs\n{text}");
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok("1000 cases".into())
}

fn disclosure_bands() -> Check {
    let cases = [
        (30, LEVEL1_RANGE, Band::Within),
        (100, LEVEL1_RANGE, Band::Within),
        (200, LEVEL2_RANGE, Band::Within),
        (5000, LEVEL2_RANGE, Band::Within),
        (29, LEVEL1_RANGE, Band::Below),
        (101, LEVEL1_RANGE, Band::Above),
        (199, LEVEL2_RANGE, Band::Below),
        (5001, LEVEL2_RANGE, Band::Above),
    ];
    for (tokens, range, want) in cases {
        ensure!(
            Band::classify(tokens, range) == want,
            "{tokens} in {range:?} is not {want:?}"
        );
    }
    Ok("8 assertions".into())
}

fn retrieval_oracle() -> Check {
    const WORDS: &[&str] = &[
        "render", "scene", "theorem", "proof", "axis", "label", "frame", "video", "parse", "token", "graph", "plan",
    ];
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let e = HashedEmbedder::default();
    let mut sizes = Vec::new();
    for corpus in 0..20 {
        let n = rng.random_range(1..=200);
        sizes.push(n);
        let modules: Vec<CandidateModule> = (0..n)
            .map(|i| {
                let words = list(&mut rng, 0, 6, |r| *WORDS.choose(r).unwrap());
                CandidateModule::new(
                    format!("m{:03}", (i * 37) % 1000),
                    format!("f{i}.py"),
                    words.join(" "),
                    &e,
                )
                .unwrap()
            })
            .collect();
        let task = list(&mut rng, 1, 6, |r| *WORDS.choose(r).unwrap()).join(" ");
        let k = rng.random_range(1..250);
        let config = IdentifierConfig {
            top_k: k,
            ..IdentifierConfig::default()
        };
        let task = TaskDescription::new("t", task).unwrap();
        let got: Vec<(String, f64)> = retrieve_candidates(&task, &modules, &config, &e)
            .map_err(|err| format!("corpus {corpus}: {err}"))?
            .into_iter()
            .map(|m| (m.module_id, m.retrieval_score))
            .collect();
        let q = e.embed(&task.text).unwrap();
        let mut want: Vec<(String, f64)> = modules
            .iter()
            .map(|m| (m.module_id.clone(), oracle_cosine(q.values(), m.embedding.values())))
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        want.truncate(k);
        ensure!(got == want, "corpus {corpus} (n={n}, k={k}) differs from brute force");
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("20 corpora, max {} modules", sizes.iter().max().unwrap()))
}

fn cosine_identities() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    let cos = |a: &[f64], b: &[f64]| {
        cosine_similarity(&EmbeddingVector::new(a.to_vec()), &EmbeddingVector::new(b.to_vec())).unwrap()
    };
    for i in 0..500 {
        let v = dense(&mut rng, 32);
        ensure!((cos(&v, &v) - 1.0).abs() <= 1e-9, "self similarity pair {i}");
        let (a, b) = (dense(&mut rng, 32), dense(&mut rng, 32));
        ensure!(cos(&a, &b) == cos(&b, &a), "symmetry pair {i}");
        let mut x = vec![0.0; 32];
        let mut y = vec![0.0; 32];
        x[..16].copy_from_slice(&dense(&mut rng, 16));
        y[16..].copy_from_slice(&dense(&mut rng, 16));
        ensure!(cos(&x, &y) == 0.0, "orthogonal pair {i}");
    }
    let e = HashedEmbedder::default();
    let mut scaled_trials = 0;
    while scaled_trials < 500 {
        let q = EmbeddingVector::new(dense(&mut rng, 24));
        let n = rng.random_range(2..12);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| dense(&mut rng, 24)).collect();
        let factors: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..100.0)).collect();
        let make = |scale: bool| -> Vec<CandidateModule> {
            vs.iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut m = CandidateModule::new(format!("m{i:02}"), "f", "", &e).unwrap();
                    let ev = EmbeddingVector::new(v.clone());
                    m.embedding = if scale { ev.scaled(factors[i]) } else { ev };
                    m
                })
                .collect()
        };
        let base = retrieve_with_query(&q, &make(false), 100).unwrap();
        if base
            .windows(2)
            .any(|w| (w[0].retrieval_score - w[1].retrieval_score).abs() <= 1e-12)
        {
            continue;
        }
        let scaled = retrieve_with_query(&q.scaled(rng.random_range(0.01..100.0)), &make(true), 100).unwrap();
        let ids = |ms: &[CandidateModule]| ms.iter().map(|m| m.module_id.clone()).collect::<Vec<_>>();
        ensure!(
            ids(&base) == ids(&scaled),
            "scaling changed ranking in trial {scaled_trials}"
        );
        scaled_trials += 1;
    }
    Ok("500 pairs per identity".into())
}

fn skills_in(dir: &Path) -> Vec<SkillArtifact> {
    let mut dirs: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| load_skill_dir(d).unwrap_or_else(|e| panic!("{}: {e}", d.display())))
        .collect()
}

fn critical_rules(r: &GateReport) -> BTreeSet<String> {
    r.findings
        .iter()
        .filter(|f| f.severity == Severity::Critical)
        .map(|f| f.rule_id.clone())
        .collect()
}

fn seeded_vulnerability_corpus() -> Check {
    let policy = CompiledPolicy::builtin();
    let f = fixtures();
    let vulnerable = skills_in(&f.join("corpus/vulnerable"));
    let clean: Vec<SkillArtifact> = [skills_in(&f.join("corpus/clean")), skills_in(&f.join("skills"))].concat();
    ensure!(
        vulnerable.len() == 12 && clean.len() == 8,
        "corpus sizes {}/{}",
        vulnerable.len(),
        clean.len()
    );

    let mut covered = BTreeSet::new();
    let mut reports = Vec::new();
    for a in &vulnerable {
        let r = g1_static_scan(a, policy);
        let crit = critical_rules(&r);
        ensure!(!crit.is_empty(), "{} has no Critical finding", a.skill_id());
        covered.extend(crit);
        reports.push((a.skill_id(), r));
    }
    for rule in ["dynamic-eval", "destructive-fs", "credentialed-download", "obfuscation"] {
        ensure!(covered.contains(rule), "no crafted skill triggers {rule}");
    }
    for a in &clean {
        let r = g1_static_scan(a, policy);
        ensure!(
            critical_rules(&r).is_empty(),
            "clean {} flagged: {:?}",
            a.skill_id(),
            critical_rules(&r)
        );
        reports.push((a.skill_id(), r));
    }
    let rate = vulnerability_rate(&reports).map_err(|e| e.to_string())?;
    ensure!(rate == 0.6, "20-skill rate {rate}");

    // 1000 skills: 261 copies of crafted vulnerable skills, 739 of clean ones, renamed.
    let mut big = Vec::with_capacity(1000);
    for i in 0..1000 {
        let mut a = if i < 261 {
            vulnerable[i % 12].clone()
        } else {
            clean[i % 8].clone()
        };
        a.frontmatter.name = format!("{}-{i}", a.frontmatter.name);
        let r = g1_static_scan(&a, policy);
        big.push((a.skill_id(), r));
    }
    let big_rate = vulnerability_rate(&big).map_err(|e| e.to_string())?;
    ensure!(big_rate == 0.261, "1000-skill rate {big_rate}");
    Ok(format!(
        "rate {rate:.3} on 20, {big_rate:.3} on 1000; rules {covered:?}"
    ))
}

fn trust_tier_table() -> Check {
    let report = |gate, verdict| GateReport {
        gate,
        verdict,
        findings: vec![],
        notes: vec![],
    };
    let tiers = [
        TrustTier::T0,
        TrustTier::T1,
        TrustTier::T2,
        TrustTier::T3,
        TrustTier::T4,
    ];
    for bits in 0u8..16 {
        let vs: Vec<GateVerdict> = (0..4)
            .map(|i| {
                if bits >> i & 1 == 1 {
                    GateVerdict::Pass
                } else {
                    GateVerdict::Fail
                }
            })
            .collect();
        let leading = vs.iter().take_while(|v| **v == GateVerdict::Pass).count();
        let reports: Vec<GateReport> = Gate::ALL.iter().zip(&vs).map(|(g, v)| report(*g, *v)).collect();
        let got = assign_trust_tier(&reports).map_err(|e| e.to_string())?;
        ensure!(got == tiers[leading], "{vs:?} gave {got:?}");
    }
    for g4 in [GateVerdict::Pass, GateVerdict::Fail] {
        let reports = [
            report(Gate::G1, GateVerdict::Pass),
            report(Gate::G2, GateVerdict::Pass),
            report(Gate::G3, GateVerdict::Skipped),
            report(Gate::G4, g4),
        ];
        let got = assign_trust_tier(&reports).map_err(|e| e.to_string())?;
        ensure!(got == TrustTier::T2, "skipped G3 with G4 {g4:?} gave {got:?}");
    }
    Ok("16 combinations + skipped cap".into())
}

fn sanitizer_consistency() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    let alnum = |r: &mut StdRng, n: usize| -> String {
        (0..n)
            .map(|_| {
                *b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"
                    .choose(r)
                    .unwrap() as char
            })
            .collect()
    };
    let upper = |r: &mut StdRng, n: usize| -> String {
        (0..n)
            .map(|_| *b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789".choose(r).unwrap() as char)
            .collect()
    };
    for case in 0..200 {
        let parts = list(&mut rng, 1, 5, |r| {
            let secret = match r.random_range(0..6) {
                0 => format!("key = \"AKIA{}\"", upper(r, 16)),
                1 => format!("token = 'ghp_{}'", alnum(r, 36)),
                2 => format!("client(\"sk-{}\")", alnum(r, 32)),
                3 => format!("password = \"{}\"", ident(r, 7)),
                4 => format!("git clone https://{}:{}@example.com/r.git", ident(r, 5), ident(r, 8)),
                _ => format!("open('/home/{}/data/in.csv')", ident(r, 7)),
            };
            let noise = |r: &mut StdRng| -> String {
                (0..r.random_range(0..30))
                    .map(|_| *b"abc =():.,'\"".choose(r).unwrap() as char)
                    .collect()
            };
            format!("{} {secret} {}", noise(r), noise(r))
        });
        let text = parts.join("\n");
        let (once, log) = sanitize_content(&text);
        ensure!(log.count >= 1, "case {case}: nothing redacted in {text:?}");
        ensure!(
            find_credentials(&once).is_empty(),
            "case {case}: credential survives in {once:?}"
        );
        let (twice, log2) = sanitize_content(&once);
        ensure!(
            twice == once && log2.count == 0,
            "case {case}: second pass redacted {}",
            log2.count
        );
        let mut a = SkillArtifact {
            frontmatter: Frontmatter {
                name: "sanitized".into(),
                description: "d".into(),
                version: "1.0.0".into(),
                trigger: vec!["t".into()],
                dependencies: vec![],
                allowed_tools: None,
                success_criteria: None,
            },
            instructions: String::new(),
            resources: vec![],
        };
        a.resources
            .push(ResourceRef::new("scripts/run.py", once.into_bytes()).unwrap());
        let r = g1_static_scan(&a, CompiledPolicy::builtin());
        ensure!(
            !r.rule_ids().contains("hardcoded-credential"),
            "case {case}: G1 still sees a credential"
        );
    }
    Ok("200 fuzzed inputs".into())
}

fn registry_flow() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reg = arg(&tmp.path().join("registry"));
    let sandbox = mock_sandbox();
    let f = fixtures();
    let base = ["--registry", reg.as_str(), "--sandbox", sandbox.as_str()];
    let run = |extra: &[&str]| skillsmith(tmp.path(), &[&base[..], extra].concat());
    for (dir, query, resource) in [
        (
            "visual-theorem-walkthrough",
            "animate proof of the pythagorean theorem",
            "references/manim-layout.md",
        ),
        (
            "visual-layout-critic",
            "check visual quality of frame",
            "references/grid-guide.md",
        ),
    ] {
        let path = arg(&f.join("skills").join(dir));
        let r = run(&["register", &path]);
        ensure!(r.code == 0, "register {dir}: exit {} {}", r.code, r.stdout);
        let id = r.json["skill_id"].as_str().unwrap_or_default().to_string();
        let q = run(&["query", query]);
        ensure!(q.code == 0, "query {query:?}: exit {}", q.code);
        ensure!(
            q.json["matches"][0]["skill_id"] == id.as_str(),
            "query {query:?} top match {}",
            q.json["matches"][0]
        );
        let act = run(&["activate", &id, "--query", query]);
        ensure!(act.code == 0, "activate {id}: {}", act.stdout);
        let l2 = act.json["activation"]["injected_tokens"]
            .as_u64()
            .ok_or("no injected_tokens")?;
        let low = (l2 - 1).to_string();
        let over = run(&["activate", &id, "--query", query, "--budget", &low]);
        ensure!(
            over.code == 1 && over.json["error"]["kind"] == "BudgetExceeded",
            "budget {low}: {}",
            over.stdout
        );
        let res = run(&["resource", &id, resource]);
        ensure!(
            res.code == 0 && res.json["bytes"].as_u64() > Some(0),
            "resource {resource}: {}",
            res.stdout
        );
        for bad in ["../SKILL.md", "/etc/passwd", "references/../../x"] {
            let r = run(&["resource", &id, bad]);
            ensure!(
                r.code != 0 && r.json["error"]["kind"] == "PathRejected",
                "{bad} not rejected: {}",
                r.stdout
            );
        }
    }
    Ok("both exemplars".into())
}

fn graph_properties() -> Check {
    use RelationKind::*;
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    let id = |i: usize| format!("n{i:02}");
    let succ = |g: &SkillGraph, n: &str, k: RelationKind| -> Vec<String> {
        g.edges()
            .iter()
            .filter(|e| e.relation == k && e.from == n)
            .map(|e| e.to.clone())
            .collect()
    };
    let reach = |g: &SkillGraph, from: &str, k: RelationKind| -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut q = VecDeque::from([from.to_string()]);
        while let Some(n) = q.pop_front() {
            for m in succ(g, &n, k) {
                if seen.insert(m.clone()) {
                    q.push_back(m);
                }
            }
        }
        seen
    };
    let e = HashedEmbedder::default();
    let mut cycles = 0;
    for dag in 0..100 {
        let n = rng.random_range(3..14);
        let mut g = (0..n).fold(SkillGraph::new(), |g, i| g.with_node(id(i)));
        for _ in 0..rng.random_range(0..3 * n) {
            let hi = rng.random_range(1..n);
            let lo = rng.random_range(0..hi);
            let k = if rng.random_bool(0.5) {
                IsSubsetOf
            } else {
                RequiresOutputFrom
            };
            match g.with_relation(&id(hi), k, &id(lo)) {
                Ok(next) => g = next,
                Err(GraphError::DuplicateEdge) => {}
                Err(err) => return Err(format!("dag {dag}: acyclic edge rejected: {err}")),
            }
        }
        for a in g.nodes() {
            for k in RelationKind::ALL {
                for b in reach(&g, a, k) {
                    match g.with_relation(&b, k, a) {
                        Err(GraphError::CycleDetected(w)) => {
                            ensure!(
                                w.first() == Some(&b) && w.last() == Some(&b) && w[1] == *a,
                                "dag {dag}: witness {w:?}"
                            );
                            ensure!(
                                w[1..].windows(2).all(|p| succ(&g, &p[0], k).contains(&p[1])),
                                "dag {dag}: bad witness {w:?}"
                            );
                            cycles += 1;
                        }
                        _ => return Err(format!("dag {dag}: {b} -> {a} accepted")),
                    }
                }
            }
        }
        let goals: BTreeSet<String> = (0..n)
            .filter(|_| rng.random_bool(0.4))
            .map(id)
            .chain([id(n - 1)])
            .collect();
        let plan = compose_plan(&g, &goals).map_err(|err| format!("dag {dag}: {err}"))?;
        let pos: BTreeMap<&str, usize> = plan.steps.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        for edge in g.edges().iter().filter(|e| e.relation == RequiresOutputFrom) {
            if let (Some(c), Some(p)) = (pos.get(edge.from.as_str()), pos.get(edge.to.as_str())) {
                ensure!(p < c, "dag {dag}: {} after {}", edge.to, edge.from);
            }
        }
        for goal in &goals {
            let covered = pos.contains_key(goal.as_str())
                || (plan.accounting.subsumed.contains(goal)
                    && reach(&g, goal, IsSubsetOf).iter().any(|s| pos.contains_key(s.as_str())));
            ensure!(covered, "dag {dag}: goal {goal} dropped");
        }

        let texts: BTreeMap<String, String> = g
            .nodes()
            .iter()
            .map(|n| {
                (
                    n.clone(),
                    list(&mut rng, 1, 4, |r| {
                        *["plot", "axis", "label", "scene"].choose(r).unwrap()
                    })
                    .join(" "),
                )
            })
            .collect();
        let threshold = rng.random_range(0.3..1.0);
        let got: Vec<(String, String, f64)> = detect_redundancy(&g, &texts, threshold, &e)
            .map_err(|err| err.to_string())?
            .into_iter()
            .map(|p| (p.a, p.b, p.similarity))
            .collect();
        let ids: Vec<&String> = texts.keys().collect();
        let mut want = Vec::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let s = oracle_cosine(
                    e.embed(&texts[ids[i]]).unwrap().values(),
                    e.embed(&texts[ids[j]]).unwrap().values(),
                );
                if s >= threshold {
                    want.push((ids[i].clone(), ids[j].clone(), s));
                }
            }
        }
        want.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        ensure!(got == want, "dag {dag}: redundancy differs from all-pairs oracle");
    }
    Ok(format!("100 DAGs, {cycles} cycle insertions rejected"))
}

fn critic_geometry() -> Check {
    let f = Frame::new(1920, 1080).map_err(|e| e.to_string())?;
    let el = |id: &str, bbox| Element::new(id, bbox, ElementKind::Shape);
    let full = map_to_grid(&el("full", [0, 0, 1920, 1080]), &f).unwrap();
    ensure!(
        full.len() == (f.grid_rows * f.grid_cols) as usize,
        "full frame maps to {} cells",
        full.len()
    );
    let corner = map_to_grid(&el("corner", [0, 0, 191, 107]), &f).unwrap();
    ensure!(corner == BTreeSet::from([(0, 0)]), "corner maps to {corner:?}");

    let cells = |v: &[(u32, u32)]| v.iter().copied().collect::<BTreeSet<_>>();
    let a = cells(&[(0, 0), (0, 1)]);
    ensure!(overlap_score(&a, &cells(&[(5, 5)])).unwrap() == 0.0, "disjoint != 0");
    ensure!(
        overlap_score(&a, &cells(&[(0, 0), (0, 1), (0, 2)])).unwrap() == 1.0,
        "contained != 1"
    );
    ensure!(
        overlap_score(&a, &cells(&[(0, 1), (0, 2)])).unwrap() == 0.5,
        "half != 0.5"
    );

    // Exactly at the threshold: 1 shared cell of 4.
    let square = Frame::new(1000, 1000).unwrap();
    let pair = [el("a", [0, 0, 199, 199]), el("b", [150, 150, 299, 299])];
    let s = overlap_score(
        &map_to_grid(&pair[0], &square).unwrap(),
        &map_to_grid(&pair[1], &square).unwrap(),
    )
    .unwrap();
    ensure!(s == 0.25, "threshold pair scores {s}");
    ensure!(
        critique_layout(&pair, &square, &CriticConfig::default())
            .unwrap()
            .is_empty(),
        "suggestion at score == tau"
    );

    let mut rng = StdRng::seed_from_u64(0x5eed_0006);
    for scene in 0..200 {
        let els: Vec<Element> = (0..5)
            .map(|i| {
                let (x0, y0) = (rng.random_range(0..1900), rng.random_range(0..1070));
                let (x1, y1) = (rng.random_range(x0 + 1..=1920), rng.random_range(y0 + 1..=1080));
                el(&format!("e{i}"), [x0, y0, x1, y1])
            })
            .collect();
        let tau = rng.random_range(0.0..=1.0);
        let sug = critique_layout(&els, &f, &CriticConfig::new(tau).unwrap()).unwrap();
        let grids: Vec<_> = els.iter().map(|e| map_to_grid(e, &f).unwrap()).collect();
        let above = (0..5)
            .flat_map(|i| (i + 1..5).map(move |j| (i, j)))
            .filter(|&(i, j)| overlap_score(&grids[i], &grids[j]).unwrap() > tau)
            .count();
        ensure!(
            sug.len() == above && sug.iter().all(|s| s.overlap > tau),
            "scene {scene}: {} suggestions, {above} pairs above {tau}",
            sug.len()
        );
    }
    Ok("hand cases + 200 scenes".into())
}

fn end_to_end(suite_start: Instant) -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let f = fixtures();
    let out = tmp.path().join("out");
    let (out_s, reg, sandbox) = (arg(&out), arg(&tmp.path().join("registry")), mock_sandbox());
    let repo = arg(&f.join("repos/theorem-explainer"));
    let config = arg(&f.join("extract.toml"));
    let r = skillsmith(
        tmp.path(),
        &[
            "--config",
            &config,
            "extract",
            &repo,
            "--task",
            "visualize theorem",
            "--out",
            &out_s,
        ],
    );
    ensure!(r.code == 0, "extract exit {}: {}", r.code, r.stderr);
    let skills = r.json["skills"].as_array().cloned().unwrap_or_default();
    ensure!(!skills.is_empty(), "no skill emitted");
    for s in &skills {
        let dir = s["directory"].as_str().ok_or("skill without directory")?;
        let v = skillsmith(tmp.path(), &["validate", dir]);
        ensure!(v.code == 0 && v.json["valid"] == true, "validate {dir}: {}", v.stdout);
        let scan = skillsmith(tmp.path(), &["--sandbox", &sandbox, "scan", dir]);
        let verdict = |g: &str| -> Value {
            scan.json["verification"]["gates"]
                .as_array()
                .into_iter()
                .flatten()
                .find(|r| r["gate"] == g)
                .map(|r| r["verdict"].clone())
                .unwrap_or(Value::Null)
        };
        for g in ["G1", "G2", "G4"] {
            ensure!(verdict(g) == "Pass", "{g} on {dir}: {}", verdict(g));
        }
        let reg_run = skillsmith(
            tmp.path(),
            &["--registry", &reg, "--sandbox", &sandbox, "register", dir],
        );
        ensure!(reg_run.code == 0, "register {dir}: {}", reg_run.stdout);
        let tier = reg_run.json["tier"].as_str().unwrap_or("T0");
        ensure!(tier >= "T2", "registered at {tier}");
        let id = reg_run.json["skill_id"].as_str().unwrap_or_default();
        let artifact = load_skill_dir(Path::new(dir)).map_err(|e| e.to_string())?;
        let trigger = &artifact.frontmatter.trigger[0];
        let q = skillsmith(tmp.path(), &["--registry", &reg, "query", trigger]);
        let hit = q.json["matches"]
            .as_array()
            .into_iter()
            .flatten()
            .any(|m| m["skill_id"] == id);
        ensure!(hit, "{id} not retrieved by trigger {trigger:?}");
    }
    within(suite_start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{} skill(s); suite {:.1} s",
        skills.len(),
        suite_start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let suite_start = Instant::now();
    let criteria: Vec<Criterion> = vec![
        ("format round-trip", Box::new(format_round_trip)),
        ("disclosure bands", Box::new(disclosure_bands)),
        ("retrieval oracle", Box::new(retrieval_oracle)),
        ("cosine identities", Box::new(cosine_identities)),
        ("seeded vulnerability corpus", Box::new(seeded_vulnerability_corpus)),
        ("trust-tier table", Box::new(trust_tier_table)),
        (
            "sanitizer idempotence and G1 consistency",
            Box::new(sanitizer_consistency),
        ),
        ("registry flow", Box::new(registry_flow)),
        ("graph properties", Box::new(graph_properties)),
        ("critic geometry", Box::new(critic_geometry)),
        ("end-to-end extract", Box::new(move || end_to_end(suite_start))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {name} ({ms} ms) {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms) {why}");
            }
        }
    }
    println!("{} criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
