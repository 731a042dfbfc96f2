mod common;

use std::fs;

use common::*;

fn construction_calls(build_output: &str) -> u64 {
    build_output
        .lines()
        .find(|l| l.starts_with("construction"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|n| n.parse().ok())
        .expect("usage table in build output")
}

fn write_config(dir: &std::path::Path, edit: impl Fn(String) -> String) -> String {
    let text = fs::read_to_string(mock_config()).unwrap();
    let path = dir.join("config.toml");
    fs::write(&path, edit(text)).unwrap();
    p(&path)
}

#[test]
fn build_inspect_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let kb = build_mock_kb(dir.path());
    for f in [
        "manifest.json",
        "entities.jsonl",
        "hyperedges.jsonl",
        "edges.jsonl",
        "clusters.jsonl",
        "chunks.jsonl",
    ] {
        assert!(kb.join(f).is_file(), "missing {f}");
    }

    let inspect = cli(&["inspect", "--kb", &p(&kb)]);
    assert_eq!(inspect.code, 0, "{}", inspect.err);
    assert!(inspect.out.contains("acme") && inspect.out.contains("total"));

    let entity = cli(&["inspect", "--kb", &p(&kb), "--entity", "acme robotics"]);
    assert_eq!(entity.code, 0, "{}", entity.err);
    assert!(entity.out.contains("Acme Robotics"));

    let cfg = p(&mock_config());
    let q = cli(&["-c", &cfg, "query", "--kb", &p(&kb), "-v", "Who founded Acme Robotics?"]);
    assert_eq!(q.code, 0, "{}", q.err);
    assert!(q.out.starts_with("Alice Moreau\n"));
    assert!(q.out.contains("from acme[0..51]"));

    let j = cli(&[
        "-c",
        &cfg,
        "query",
        "--kb",
        &p(&kb),
        "--json",
        "Who founded Acme Robotics?",
    ]);
    let v: serde_json::Value = serde_json::from_str(&j.out).unwrap();
    assert_eq!(v["text"], "Alice Moreau");
    assert_eq!(v["bundle"]["mode"], "hybrid");
}

#[test]
fn rebuild_is_idempotent_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let kb = build_mock_kb(dir.path());
    let first = fs::read_to_string(kb.join("hyperedges.jsonl")).unwrap();
    let cfg = p(&mock_config());
    let build = |extra: &[&str]| {
        let mut args = vec!["-c", &cfg, "build", "--corpus"];
        let corpus = p(&corpus_manifest());
        let out = p(&kb);
        args.extend([corpus.as_str(), "--out", out.as_str()]);
        args.extend(extra);
        cli(&args)
    };

    let again = build(&[]);
    assert_eq!(again.code, 0);
    assert!(again.out.contains("up to date"));

    // output removed, per-document cache kept: nothing is re-extracted
    fs::remove_dir_all(&kb).unwrap();
    let resumed = build(&[]);
    assert_eq!(resumed.code, 0, "{}", resumed.err);
    assert_eq!(construction_calls(&resumed.out), 0);
    assert_eq!(fs::read_to_string(kb.join("hyperedges.jsonl")).unwrap(), first);

    let forced = build(&["--force"]);
    assert_eq!(forced.code, 0, "{}", forced.err);
    assert!(construction_calls(&forced.out) > 0);
    assert_eq!(fs::read_to_string(kb.join("hyperedges.jsonl")).unwrap(), first);
}

#[test]
fn eval_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let kb = build_mock_kb(dir.path());
    let report = dir.path().join("report.jsonl");
    let run = cli(&[
        "-c",
        &p(&mock_config()),
        "eval",
        "--kb",
        &p(&kb),
        "--dataset",
        &p(&dataset()),
        "--report",
        &p(&report),
    ]);
    assert_eq!(run.code, 0, "{}", run.err);
    assert!(run.out.contains("mean EM"));
    let lines = jsonl(&fs::read_to_string(report).unwrap());
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[10]["summary"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let kb = build_mock_kb(dir.path());
    let cfg = p(&mock_config());

    // usage
    assert_eq!(cli(&["query"]).code, 1);
    assert_eq!(cli(&["-c", &cfg, "query", "--kb", "/nonexistent/kb", "q"]).code, 1);
    let bad = write_config(dir.path(), |t| t.replace("ct_min = 30", "ct_min = 90"));
    assert_eq!(cli(&["-c", &bad, "inspect", "--kb", &p(&kb)]).code, 1);
    let no_sw = cli(&["-c", &cfg, "query", "--kb", &p(&kb), "--no-sw", "q"]);
    assert_eq!(no_sw.code, 1);

    // stale index: construction settings changed since the build
    let stale = write_config(dir.path(), |t| t.replace("tau_e = 2", "tau_e = 1"));
    let refused = cli(&["-c", &stale, "query", "--kb", &p(&kb), "Who founded Acme Robotics?"]);
    assert_eq!(refused.code, 3, "{}", refused.err);
    let allowed = cli(&[
        "-c",
        &stale,
        "query",
        "--kb",
        &p(&kb),
        "--allow-stale",
        "Who founded Acme Robotics?",
    ]);
    assert_eq!(allowed.code, 0, "{}", allowed.err);

    // provider: nothing listens on the discard port
    let http = write_config(dir.path(), |t| {
        t.replace(
            "kind = \"mock\"\ndimension = 256\nseed = 0",
            "kind = \"http\"\nendpoint = \"http://127.0.0.1:9/v1\"\nmax_retries = 0\ntimeout_secs = 2",
        )
    });
    let out = dir.path().join("kb_http");
    let failed = cli(&[
        "-c",
        &http,
        "build",
        "--corpus",
        &p(&corpus_manifest()),
        "--out",
        &p(&out),
    ]);
    assert_eq!(failed.code, 2, "{}", failed.err);
    assert!(!out.exists());

    // integrity
    let lines = fs::read_to_string(kb.join("edges.jsonl")).unwrap();
    fs::write(kb.join("edges.jsonl"), format!("{{not json\n{lines}")).unwrap();
    let corrupt = cli(&["inspect", "--kb", &p(&kb)]);
    assert_eq!(corrupt.code, 3);
    assert!(corrupt.err.contains("edges.jsonl:1"), "{}", corrupt.err);
}

#[test]
fn no_sw_build_is_queryable_with_no_sw() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(&mock_config());
    let kb = dir.path().join("kb");
    let build = cli(&[
        "-c",
        &cfg,
        "build",
        "--corpus",
        &p(&corpus_manifest()),
        "--out",
        &p(&kb),
        "--no-sw",
        "--no-ssc",
    ]);
    assert_eq!(build.code, 0, "{}", build.err);
    assert!(build.out.contains(" 0 clusters"));
    let q = cli(&[
        "-c",
        &cfg,
        "query",
        "--kb",
        &p(&kb),
        "--no-sw",
        "Who founded Acme Robotics?",
    ]);
    assert_eq!(q.code, 0, "{}", q.err);
}
