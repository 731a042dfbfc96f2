#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn mock_config() -> PathBuf {
    fixtures().join("mock.toml")
}

pub fn corpus_manifest() -> PathBuf {
    fixtures().join("corpus/manifest.jsonl")
}

pub fn dataset() -> PathBuf {
    fixtures().join("dataset.jsonl")
}

pub struct Run {
    pub code: i32,
    pub out: String,
    pub err: String,
}

/// Runs the command line in-process with `args` after the program name.
pub fn cli<S: AsRef<str>>(args: &[S]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<String> = std::iter::once("structrag".to_string())
        .chain(args.iter().map(|a| a.as_ref().to_string()))
        .collect();
    let code = structrag_cli::main_with(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).expect("utf-8 stdout"),
        err: String::from_utf8(err).expect("utf-8 stderr"),
    }
}

pub fn p(path: &Path) -> String {
    path.to_str().expect("utf-8 path").to_string()
}

/// Builds the mock corpus into `dir/kb` and returns that path.
pub fn build_mock_kb(dir: &Path) -> PathBuf {
    let kb = dir.join("kb");
    let run = cli(&[
        "-c".into(),
        p(&mock_config()),
        "build".into(),
        "--corpus".into(),
        p(&corpus_manifest()),
        "--out".into(),
        p(&kb),
    ]);
    assert_eq!(run.code, 0, "build failed: {}", run.err);
    kb
}

/// Drops wall-clock fields, which vary between runs.
pub fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("wall_time_ms");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

pub fn jsonl(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).expect("valid JSON line");
            strip_timing(&mut v);
            v
        })
        .collect()
}
