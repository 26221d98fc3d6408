use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use skillmux::io::{read_json, read_run, QueryFile};
use skillmux_core::eval::{evaluate_run, MetricsReport};

const TOPICS: [(&str, &str); 5] = [
    ("audio", "speech whisper recording transcribe wav"),
    ("docs", "pdf pages merge extract document"),
    ("git", "commit rebase branch history merge"),
    ("web", "http html scrape page crawl"),
    ("data", "csv columns pandas chart table"),
];

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = Vec::new();
        for i in 0..30 {
            let (topic, words) = TOPICS[i % TOPICS.len()];
            let w: Vec<&str> = words.split(' ').collect();
            let text = (0..12)
                .map(|j| w[(i * 7 + j * 3) % w.len()])
                .collect::<Vec<_>>()
                .join(" ");
            pool.push(json!({
                "id": format!("s{i}"),
                "name": format!("{topic}-tool-{i}"),
                "description": text,
                "body": format!("```bash\n{topic}ctl run\n```\n{text}"),
                "category": topic,
            }));
        }
        let mut queries = Vec::new();
        for i in 0..10 {
            let (_, words) = TOPICS[i % TOPICS.len()];
            let w: Vec<&str> = words.split(' ').collect();
            let gt = if i % 3 == 0 {
                vec![format!("s{}", i % 5), format!("s{}", i % 5 + 5)]
            } else {
                vec![format!("s{}", i % 5)]
            };
            queries.push(json!({
                "query_id": format!("q{i}"),
                "text": format!("{} {} {}", w[i % 5], w[(i + 2) % 5], w[(i + 4) % 5]),
                "gt": gt,
                "tier": if i < 5 { "easy" } else { "hard" },
            }));
        }
        let f = Fixture { dir };
        f.write_jsonl("pool.jsonl", &pool);
        f.write_jsonl("queries.jsonl", &queries);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_jsonl(&self, name: &str, rows: &[Value]) {
        let text: String = rows.iter().map(|r| r.to_string() + "\n").collect();
        std::fs::write(self.path(name), text).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_skillmux"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn routing_outputs_are_byte_identical_across_runs() {
    let f = Fixture::new();
    f.ok(&[
        "index",
        "dense",
        "--pool",
        "pool.jsonl",
        "--hash-dim",
        "64",
        "--output",
        "emb.jsonl",
    ]);
    for out in ["a.jsonl", "b.jsonl"] {
        f.ok(&[
            "route",
            "--pool",
            "pool.jsonl",
            "--retriever",
            "dense",
            "--embeddings",
            "emb.jsonl",
            "--queries",
            "queries.jsonl",
            "--k",
            "8",
            "--reranker",
            "scored",
            "--scorer",
            "lexical",
            "--output",
            out,
        ]);
    }
    assert_eq!(bytes(&f.path("a.jsonl")), bytes(&f.path("b.jsonl")));
    let runs = read_run(&f.path("a.jsonl")).unwrap();
    assert_eq!(runs.len(), 10);
    assert!(runs.iter().all(|r| r.ranking.len() <= 8));
    let manifest: Value = read_json(&f.path("a.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest["seeds"]["seed"], 13);
    assert!(manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn mining_is_reproducible_under_a_seed() {
    let f = Fixture::new();
    let mine = |seed: &str, out: &str| {
        f.ok(&[
            "--seed",
            seed,
            "forge",
            "mine",
            "--pool",
            "pool.jsonl",
            "--queries",
            "queries.jsonl",
            "--hash-dim",
            "64",
            "--output",
            out,
        ]);
    };
    mine("5", "m1.jsonl");
    mine("5", "m2.jsonl");
    mine("6", "m3.jsonl");
    assert_eq!(bytes(&f.path("m1.jsonl")), bytes(&f.path("m2.jsonl")));
    assert_ne!(bytes(&f.path("m1.jsonl")), bytes(&f.path("m3.jsonl")));
    let text = std::fs::read_to_string(f.path("m1.jsonl")).unwrap();
    // one example per (query, ground-truth skill) pair
    assert_eq!(text.lines().count(), 14);
    for line in text.lines() {
        let ex: Value = serde_json::from_str(line).unwrap();
        let pos = ex["positive_id"].as_str().unwrap();
        assert!(ex["negatives"].as_array().unwrap().iter().all(|n| n["skill_id"] != pos));
    }
}

#[test]
fn filter_removes_planted_false_negatives() {
    let f = Fixture::new();
    let mut pool: Vec<Value> = std::fs::read_to_string(f.path("pool.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let s0 = pool[0].clone();
    pool.push(json!({"id": "dup-name", "name": s0["name"].as_str().unwrap().to_uppercase(), "description": "x", "body": "unrelated words here", "category": "misc"}));
    pool.push(json!({"id": "dup-body", "name": "other", "description": "y", "body": s0["body"], "category": "misc"}));
    f.write_jsonl("pool.jsonl", &pool);
    f.write_jsonl(
        "examples.jsonl",
        &[json!({
            "query": "transcribe a recording",
            "positive_id": "s0",
            "negatives": [
                {"skill_id": "dup-name", "source": "semantic"},
                {"skill_id": "dup-body", "source": "lexical"},
                {"skill_id": "s1", "source": "random"},
            ],
        })],
    );
    let stdout = f.ok(&[
        "forge",
        "filter",
        "--pool",
        "pool.jsonl",
        "--examples",
        "examples.jsonl",
        "--hash-dim",
        "64",
        "--output",
        "kept.jsonl",
    ]);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["removed_by_name"], 1);
    assert_eq!(report["removed_by_trigram"], 1);
    assert_eq!(report["total_seen"], 3);
    let kept: Value = serde_json::from_str(std::fs::read_to_string(f.path("kept.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(kept["negatives"], json!([{"skill_id": "s1", "source": "random"}]));
}

#[test]
fn eval_run_matches_library_evaluation() {
    let f = Fixture::new();
    f.ok(&["index", "bm25", "--pool", "pool.jsonl", "--output", "bm25.idx"]);
    f.ok(&[
        "route",
        "--pool",
        "pool.jsonl",
        "--bm25-index",
        "bm25.idx",
        "--queries",
        "queries.jsonl",
        "--k",
        "20",
        "--output",
        "run.jsonl",
    ]);
    let stdout = f.ok(&[
        "eval",
        "run",
        "--run",
        "bm25=run.jsonl",
        "--relevance",
        "queries.jsonl",
        "--pool",
        "pool.jsonl",
        "--output",
        "report.json",
    ]);
    assert!(stdout.contains("A-Hit@1"));
    let cli: BTreeMap<String, MetricsReport> = read_json(&f.path("report.json")).unwrap();
    let relevance = QueryFile::read(&f.path("queries.jsonl")).unwrap().relevance().unwrap();
    let direct = evaluate_run(&read_run(&f.path("run.jsonl")).unwrap(), &relevance, &[]).unwrap();
    let got = &cli["bm25"];
    assert_eq!(got.overall, direct.overall);
    assert_eq!(got.tiers, direct.tiers);
    assert_eq!(got.per_query, direct.per_query);
    assert!(got.missing.is_empty());
}

#[test]
fn oracle_ablation_and_decomposition_run() {
    let f = Fixture::new();
    let stdout = f.ok(&[
        "eval",
        "ablate",
        "--pool",
        "pool.jsonl",
        "--queries",
        "queries.jsonl",
        "--reranker",
        "scored",
        "--scorer",
        "oracle",
        "--ks",
        "5,20",
    ]);
    assert!(stdout.contains('5') && stdout.contains("20"));
    f.ok(&[
        "route",
        "--pool",
        "pool.jsonl",
        "--queries",
        "queries.jsonl",
        "--k",
        "20",
        "--output",
        "enc.jsonl",
    ]);
    f.ok(&[
        "route",
        "--pool",
        "pool.jsonl",
        "--queries",
        "queries.jsonl",
        "--k",
        "20",
        "--reranker",
        "scored",
        "--scorer",
        "oracle",
        "--output",
        "pipe.jsonl",
    ]);
    f.ok(&[
        "eval",
        "decompose",
        "--encoder",
        "enc.jsonl",
        "--pipeline",
        "pipe.jsonl",
        "--relevance",
        "queries.jsonl",
        "--output",
        "d.json",
    ]);
    let d: Value = read_json(&f.path("d.json")).unwrap();
    let all = &d["all"];
    let total: u64 = ["both_correct", "fixed", "degraded", "both_missed"]
        .iter()
        .map(|k| all[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 10);
    // the oracle never demotes a correct top-1
    assert_eq!(all["degraded"], 0);
}

#[test]
fn gradient_check_passes() {
    let f = Fixture::new();
    let stdout = f.ok(&["objectives", "check-gradients", "--instances", "20"]);
    let r: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(r["passed"], true);
    assert!(r["max_error_info_nce"].as_f64().unwrap() < 1e-6);
}

#[test]
fn bench_reports_latency_fields() {
    let f = Fixture::new();
    f.ok(&[
        "bench",
        "latency",
        "--pool",
        "pool.jsonl",
        "--queries",
        "queries.jsonl",
        "--warmup",
        "2",
        "--output",
        "lat.json",
    ]);
    let r: Value = read_json(&f.path("lat.json")).unwrap();
    let r = if r.is_array() { r[0].clone() } else { r };
    let text = r.to_string();
    assert!(
        text.contains("p50_ms") && text.contains("p95_ms") && text.contains("qps"),
        "{text}"
    );
}

#[test]
fn config_round_trips_and_unknown_keys_fail() {
    let f = Fixture::new();
    let toml_text = f.ok(&["config"]);
    std::fs::write(f.path("c.toml"), &toml_text).unwrap();
    assert_eq!(f.ok(&["--config", "c.toml", "config"]), toml_text);
    std::fs::write(f.path("bad.toml"), "seed = 1\nnot_a_key = 2\n").unwrap();
    let out = f.run(&["--config", "bad.toml", "config"]);
    assert!(!out.status.success());
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let f = Fixture::new();
    let out = f.run(&["pool", "audit", "--pool", "missing.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    let rec = json!({"id": "a", "name": "n", "description": "d", "body": "b", "category": "c"});
    f.write_jsonl("dup.jsonl", &[rec.clone(), rec]);
    let out = f.run(&["index", "bm25", "--pool", "dup.jsonl", "--output", "x.idx"]);
    assert!(!out.status.success());

    let out = f.run(&["eval", "run", "--run", "nosuchfile", "--relevance", "queries.jsonl"]);
    assert!(!out.status.success());
}
