//! Answer scoring (exact match, token F1) and batch evaluation.
//!
//! Normalization: lowercase, drop every character that is neither
//! alphanumeric nor whitespace, collapse whitespace. Articles are kept.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::BuildFlags;
use crate::prompts::Prompts;
use crate::providers::{Provider, UsageReport};
use crate::retrieval::{generate_answer, retrieve, Ablation, RetrievalConfig, RetrievalMode};
use crate::store::KnowledgeBase;
use crate::text::normalize_name;

pub fn normalize_answer(s: &str) -> String {
    normalize_name(s)
}

/// 1 when the normalized strings are equal, else 0.
pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if normalize_answer(prediction) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Harmonic mean of precision and recall over normalized token multisets;
/// 0 when either side has no tokens.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    #[serde(alias = "gold_answer")]
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reading dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset contains no usable question-answer pairs")]
    EmptyDataset,
    #[error("sweep needs at least one value")]
    EmptySweep,
}

/// Parses one JSON object per line. Bad lines are reported and skipped.
pub fn parse_dataset(text: &str) -> (Vec<QaPair>, Vec<DatasetIssue>) {
    let mut pairs = Vec::new();
    let mut issues = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let issue = |message: String| DatasetIssue { line: n + 1, message };
        match serde_json::from_str::<QaPair>(line) {
            Ok(p) if p.question.trim().is_empty() || p.answer.trim().is_empty() => {
                issues.push(issue("question and answer must be non-empty".into()))
            }
            Ok(p) => pairs.push(p),
            Err(e) => issues.push(issue(e.to_string())),
        }
    }
    (pairs, issues)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<QaPair>, Vec<DatasetIssue>), EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_dataset(&text))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub index: usize,
    pub question: String,
    pub gold: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub low_confidence: bool,
    pub entities: usize,
    pub edges: usize,
    pub hyperedges: usize,
    pub clusters: usize,
    /// Hyperedges plus clusters found before the token budget.
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub em: f64,
    pub f1: f64,
    pub mode: RetrievalMode,
    pub ablation: Ablation,
    pub build_flags: BuildFlags,
    pub retrieval: RetrievalConfig,
    pub usage: UsageReport,
    pub dataset_issues: Vec<DatasetIssue>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    /// One JSON record per item followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": true,
            "em": self.em,
            "f1": self.f1,
            "items": self.items.len(),
            "mode": self.mode,
            "ablation": self.ablation,
            "build_flags": self.build_flags,
            "retrieval": self.retrieval,
            "usage": self.usage,
            "dataset_issues": self.dataset_issues,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4}  {:>4}  {:>6}  {:<40}  {:<24}  prediction",
            "#", "EM", "F1", "question", "gold"
        )?;
        for item in &self.items {
            let q: String = item.question.chars().take(40).collect();
            let g: String = item.gold.chars().take(24).collect();
            writeln!(
                f,
                "{:>4}  {:>4.0}  {:>6.3}  {:<40}  {:<24}  {}",
                item.index + 1,
                item.em,
                item.f1,
                q,
                g,
                item.error
                    .as_deref()
                    .map_or(item.prediction.clone(), |e| format!("<error: {e}>"))
            )?;
        }
        writeln!(
            f,
            "mean EM {:.4}  mean F1 {:.4}  over {} item(s)",
            self.em,
            self.f1,
            self.items.len()
        )?;
        writeln!(
            f,
            "mode {}  ablation no_enr={} no_er={} no_hr={} no_ssc={}  build no_ssc={} no_sw={}",
            self.mode,
            self.ablation.no_enr,
            self.ablation.no_er,
            self.ablation.no_hr,
            self.ablation.no_ssc,
            self.build_flags.no_ssc,
            self.build_flags.no_sw
        )?;
        for issue in &self.dataset_issues {
            writeln!(f, "skipped dataset line {}: {}", issue.line, issue.message)?;
        }
        write!(f, "{}", self.usage)
    }
}

/// Shared inputs for evaluating questions against one knowledge base.
pub struct EvalContext<'a> {
    pub kb: &'a KnowledgeBase,
    pub retrieval: RetrievalConfig,
    pub ablation: Ablation,
    pub provider: &'a dyn Provider,
    pub prompts: &'a Prompts,
    pub temperature: f32,
}

impl EvalContext<'_> {
    fn answer(&self, index: usize, pair: &QaPair) -> EvalItem {
        let mut item = EvalItem {
            index,
            question: pair.question.clone(),
            gold: pair.answer.clone(),
            prediction: String::new(),
            em: 0.0,
            f1: 0.0,
            low_confidence: false,
            entities: 0,
            edges: 0,
            hyperedges: 0,
            clusters: 0,
            candidates: 0,
            error: None,
        };
        let bundle = match retrieve(
            &pair.question,
            self.kb,
            &self.retrieval,
            self.ablation,
            self.provider,
            self.prompts,
        ) {
            Ok(b) => b,
            Err(e) => {
                item.error = Some(e.to_string());
                return item;
            }
        };
        item.entities = bundle.entities.len();
        item.edges = bundle.edges.len();
        item.hyperedges = bundle.hyperedges.len();
        item.clusters = bundle.clusters.len();
        item.candidates = bundle.stats.hyperedges + bundle.stats.clusters;
        match generate_answer(bundle, self.provider, self.prompts, self.temperature) {
            Ok(a) => {
                item.em = exact_match(&a.text, &pair.answer);
                item.f1 = token_f1(&a.text, &pair.answer);
                item.prediction = a.text;
                item.low_confidence = a.low_confidence;
            }
            Err(e) => item.error = Some(e.to_string()),
        }
        item
    }

    fn items(&self, dataset: &[QaPair]) -> Vec<EvalItem> {
        let indexed: Vec<(usize, &QaPair)> = dataset.iter().enumerate().collect();
        crate::exec::map(&indexed, |(i, p)| self.answer(*i, p))
    }
}

/// Scores every pair; failures score 0 and are recorded on the item.
pub fn run_eval(
    dataset: &[QaPair],
    ctx: &EvalContext<'_>,
    dataset_issues: Vec<DatasetIssue>,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mark = ctx.provider.usage().mark();
    let items = ctx.items(dataset);
    Ok(EvalReport {
        em: mean(items.iter().map(|i| i.em)),
        f1: mean(items.iter().map(|i| i.f1)),
        items,
        mode: ctx.retrieval.mode,
        ablation: ctx.ablation,
        build_flags: ctx.kb.manifest.flags,
        retrieval: ctx.retrieval,
        usage: ctx.provider.usage().report_since(mark),
        dataset_issues,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_hyperedges: usize,
    /// Hyperedge and cluster candidates summed over the dataset.
    pub candidates: usize,
    pub mean_candidates: f64,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[0].candidates <= w[1].candidates)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_hyperedges,candidates,mean_candidates,em,f1\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4}\n",
                p.n_hyperedges, p.candidates, p.mean_candidates, p.em, p.f1
            ));
        }
        out
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12}  {:>10}  {:>8}  {:>6}  {:>6}",
            "n_hyperedges", "candidates", "mean", "EM", "F1"
        )?;
        for p in &self.points {
            writeln!(
                f,
                "{:>12}  {:>10}  {:>8.3}  {:>6.3}  {:>6.3}",
                p.n_hyperedges, p.candidates, p.mean_candidates, p.em, p.f1
            )?;
        }
        Ok(())
    }
}

/// Repeats the evaluation for each hyperedge cap in `values`.
pub fn sweep_hyperedges(values: &[usize], dataset: &[QaPair], ctx: &EvalContext<'_>) -> Result<SweepReport, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptySweep);
    }
    let mut points = Vec::with_capacity(values.len());
    for &n in values {
        let run = EvalContext {
            retrieval: RetrievalConfig {
                n_hyperedges: n,
                ..ctx.retrieval
            },
            ..*ctx
        };
        let report = run_eval(dataset, &run, Vec::new())?;
        let candidates: usize = report.items.iter().map(|i| i.candidates).sum();
        points.push(SweepPoint {
            n_hyperedges: n,
            candidates,
            mean_candidates: candidates as f64 / report.items.len() as f64,
            em: report.em,
            f1: report.f1,
        });
    }
    Ok(SweepReport { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("Paris", "Paris"), 1.0);
        assert_eq!(exact_match("Paris.", "paris"), 1.0);
        assert_eq!(exact_match("Paris, France", "Paris"), 0.0);
    }

    #[test]
    fn f1_examples() {
        assert!((token_f1("knowledge graph retrieval", "graph retrieval") - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("same words", "same words"), 1.0);
        assert_eq!(token_f1("alpha", "beta"), 0.0);
        assert_eq!(token_f1("", "beta"), 0.0);
        assert_eq!(token_f1("!!", "beta"), 0.0);
        // multiset: repeated prediction tokens count once per gold occurrence
        assert!((token_f1("the the", "the cat") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dataset_lines_reported() {
        let text = "{\"question\":\"Q1?\",\"answer\":\"A\"}\nnot json\n\n{\"question\":\"\",\"answer\":\"x\"}\n{\"question\":\"Q2?\",\"gold_answer\":\"B\",\"domain\":\"mix\"}\n";
        let (pairs, issues) = parse_dataset(text);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].domain.as_deref(), Some("mix"));
        assert_eq!(issues.iter().map(|i| i.line).collect::<Vec<_>>(), [2, 4]);
    }

    #[test]
    fn means() {
        assert_eq!(mean([1.0, 0.0].into_iter()), 0.5);
        assert_eq!(mean(std::iter::empty()), 0.0);
    }
}
