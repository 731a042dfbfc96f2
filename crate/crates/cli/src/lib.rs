//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 provider failure,
//! 3 knowledge-base integrity failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use structrag_core::config::{BuildFlags, ConfigError, PipelineConfig};
use structrag_core::corpus::{load_corpus, Document};
use structrag_core::eval::{load_dataset, run_eval, sweep_hyperedges, EvalContext, EvalError};
use structrag_core::extraction::PrefixCache;
use structrag_core::kbuild::DocKnowledge;
use structrag_core::pipeline::Builder;
use structrag_core::prompts::Prompts;
use structrag_core::providers::{Provider, ProviderError};
use structrag_core::retrieval::{generate_answer, retrieve, Ablation, RetrievalError, RetrievalMode};
use structrag_core::store::{load_kb, merge_documents, save_kb, BuildMeta, KnowledgeBase, StoreError};
use structrag_core::text::{normalize_name, sha256_hex};

#[derive(Debug, Parser)]
#[command(
    name = "structrag",
    version,
    about = "Build and query multi-granular knowledge bases"
)]
pub struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a knowledge base from a corpus manifest.
    Build(BuildArgs),
    /// Answer one question.
    Query(QueryArgs),
    /// Score a question-answer dataset.
    Eval(EvalArgs),
    /// Evaluate over a range of hyperedge caps.
    Sweep(SweepArgs),
    /// Print the manifest and record counts of a knowledge base.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus manifest: one JSON object per line with `doc_id` and `path`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output knowledge-base directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip hyperedge clustering.
    #[arg(long)]
    pub no_ssc: bool,
    /// Extract each chunk without preceding context.
    #[arg(long)]
    pub no_sw: bool,
    /// Rebuild everything and replace a knowledge base in another format version.
    #[arg(long)]
    pub force: bool,
    /// Worker threads (overrides the config; 0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    /// Knowledge-base directory.
    #[arg(long)]
    pub kb: PathBuf,
    /// hypergraph, graph or hybrid (default from config).
    #[arg(long)]
    pub mode: Option<RetrievalMode>,
    /// Disable entity retrieval.
    #[arg(long)]
    pub no_enr: bool,
    /// Disable edge retrieval.
    #[arg(long)]
    pub no_er: bool,
    /// Disable hyperedge evidence.
    #[arg(long)]
    pub no_hr: bool,
    /// Disable cluster evidence.
    #[arg(long)]
    pub no_ssc: bool,
    /// Require a knowledge base built without sliding-window context.
    #[arg(long)]
    pub no_sw: bool,
    /// Query an index whose build settings differ from the current config.
    #[arg(long)]
    pub allow_stale: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Print the evidence with provenance spans.
    #[arg(long, short)]
    pub verbose: bool,
    /// Print answer and evidence as JSON.
    #[arg(long)]
    pub json: bool,
    pub question: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Dataset: one JSON object per line with `question` and `answer`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Write per-item records and a summary line to this JSONL file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Hyperedge caps to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 3, 5, 7, 9])]
    pub values: Vec<usize>,
    /// Directory for sweep.csv and sweep.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub kb: PathBuf,
    /// Show entities with this name (normalized match).
    #[arg(long)]
    pub entity: Option<String>,
    /// Print the manifest as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("integrity failure: {0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Provider(_) => 2,
            CliError::Integrity(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::Usage(e.to_string()),
            other => CliError::Integrity(other.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Provider(p) => CliError::Provider(p.to_string()),
            RetrievalError::DimensionMismatch { .. } => CliError::Integrity(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Usage(format!("writing output: {e}")))
}

/// Reads and validates the pipeline configuration.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let config = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            let mut config: PipelineConfig =
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if let Some(dir) = &config.prompts_dir {
                if dir.is_relative() {
                    config.prompts_dir = Some(p.parent().unwrap_or(Path::new(".")).join(dir));
                }
            }
            config
        }
    };
    config.validate()?;
    Ok(config)
}

/// Runs a parsed command line, writing user-facing output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let prompts = config.prompts()?;
    match cli.command {
        Command::Build(args) => {
            let provider = config.provider.build()?;
            cmd_build(&args, &config, provider.as_ref(), &prompts, out)
        }
        Command::Query(args) => {
            let provider = config.provider.build()?;
            cmd_query(&args, &config, provider.as_ref(), &prompts, out)
        }
        Command::Eval(args) => {
            let provider = config.provider.build()?;
            cmd_eval(&args, &config, provider.as_ref(), &prompts, out)
        }
        Command::Sweep(args) => {
            let provider = config.provider.build()?;
            cmd_sweep(&args, &config, provider.as_ref(), &prompts, out)
        }
        Command::Inspect(args) => cmd_inspect(&args, out),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Completed document stored in the build cache.
#[derive(Serialize, Deserialize)]
struct CachedDoc {
    build_hash: String,
    content_hash: String,
    knowledge: DocKnowledge,
}

/// Per-document cache directory next to the output directory.
pub fn cache_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "kb".into());
    name.push(".cache");
    out.with_file_name(name)
}

fn cache_file(dir: &Path, doc_id: &str) -> PathBuf {
    dir.join(format!("{}.json", &sha256_hex(doc_id.as_bytes())[..16]))
}

fn read_cached(dir: &Path, doc: &Document, build_hash: &str) -> Option<DocKnowledge> {
    let text = fs::read_to_string(cache_file(dir, &doc.doc_id)).ok()?;
    let cached: CachedDoc = serde_json::from_str(&text).ok()?;
    (cached.build_hash == build_hash
        && cached.content_hash == doc.content_hash()
        && cached.knowledge.doc_id == doc.doc_id)
        .then_some(cached.knowledge)
}

fn write_cached(dir: &Path, doc: &Document, build_hash: &str, knowledge: &DocKnowledge) -> Result<(), CliError> {
    let path = cache_file(dir, &doc.doc_id);
    let tmp = path.with_extension("json.tmp");
    let record = CachedDoc {
        build_hash: build_hash.to_string(),
        content_hash: doc.content_hash(),
        knowledge: knowledge.clone(),
    };
    fs::write(&tmp, serde_json::to_vec(&record).expect("cache record serializes")).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io_error(&path, e))
}

fn up_to_date(out: &Path, docs: &[Document], build_hash: &str) -> bool {
    let Ok(text) = fs::read_to_string(out.join(structrag_core::store::MANIFEST_FILE)) else {
        return false;
    };
    let Ok(manifest) = serde_json::from_str::<structrag_core::store::Manifest>(&text) else {
        return false;
    };
    manifest.build_hash == build_hash
        && manifest.documents.len() == docs.len()
        && manifest
            .documents
            .iter()
            .zip(docs)
            .all(|(m, d)| m.doc_id == d.doc_id && m.content_hash == d.content_hash())
}

pub fn cmd_build(
    args: &BuildArgs,
    config: &PipelineConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let flags = BuildFlags {
        no_ssc: args.no_ssc,
        no_sw: args.no_sw,
    };
    let mut config = config.clone();
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let docs = load_corpus(&args.corpus).map_err(|e| CliError::Usage(e.to_string()))?;
    if docs.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: corpus manifest lists no documents",
            args.corpus.display()
        )));
    }
    let build_hash = config.build_hash(flags, prompts);
    if !args.force && up_to_date(&args.out, &docs, &build_hash) {
        write_out(out, &format!("{} is up to date\n", args.out.display()))?;
        return Ok(());
    }

    let cache = cache_dir(&args.out);
    if args.force && cache.exists() {
        fs::remove_dir_all(&cache).map_err(|e| io_error(&cache, e))?;
    }
    fs::create_dir_all(&cache).map_err(|e| io_error(&cache, e))?;
    let mut results: Vec<Option<DocKnowledge>> = docs.iter().map(|d| read_cached(&cache, d, &build_hash)).collect();
    let pending: Vec<Document> = docs
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.is_none())
        .map(|(d, _)| d.clone())
        .collect();
    let reused = docs.len() - pending.len();
    if reused > 0 {
        write_out(out, &format!("reusing {reused} cached document(s)\n"))?;
    }

    let prefix_cache = PrefixCache::new(config.cache_capacity);
    let builder = Builder {
        config: &config,
        flags,
        provider,
        prompts,
        cache: Some(&prefix_cache),
    };
    let built = builder.build_corpus(&pending);
    let mut failures = Vec::new();
    let mut provider_failures = 0;
    for (doc, result) in pending.iter().zip(built) {
        match result {
            Ok(k) => {
                write_cached(&cache, doc, &build_hash, &k)?;
                let slot = docs
                    .iter()
                    .position(|d| d.doc_id == doc.doc_id)
                    .expect("pending doc is in corpus");
                results[slot] = Some(k);
            }
            Err(e) => {
                if e.is_provider() {
                    provider_failures += 1;
                }
                writeln!(out, "failed: {}: {e}", doc.doc_id).ok();
                failures.push(doc.doc_id.clone());
            }
        }
    }
    let done: Vec<DocKnowledge> = results.into_iter().flatten().collect();
    if done.is_empty() {
        let msg = format!("all {} document(s) failed", docs.len());
        return Err(if provider_failures > 0 {
            CliError::Provider(msg)
        } else {
            CliError::Usage(msg)
        });
    }
    let meta = BuildMeta {
        build_hash,
        config: config.snapshot(),
        flags,
    };
    let kb = merge_documents(&done, meta)?;
    save_kb(&kb, &args.out, args.force)?;
    write_out(
        out,
        &format!(
            "built {} document(s) into {}: {} entities, {} hyperedges, {} edges, {} clusters\n",
            done.len(),
            args.out.display(),
            kb.entities.len(),
            kb.hyperedges.len(),
            kb.edges.len(),
            kb.clusters.len()
        ),
    )?;
    if !failures.is_empty() {
        write_out(
            out,
            &format!("{} document(s) failed: {}\n", failures.len(), failures.join(", ")),
        )?;
    }
    write_out(out, &provider.usage().report().to_string())
}

fn ablation(args: &RetrievalArgs) -> Ablation {
    Ablation {
        no_enr: args.no_enr,
        no_er: args.no_er,
        no_hr: args.no_hr,
        no_ssc: args.no_ssc,
    }
}

/// Loads the knowledge base and checks it against the current config and
/// the requested build-time flags.
fn open_kb(args: &RetrievalArgs, config: &PipelineConfig, prompts: &Prompts) -> Result<KnowledgeBase, CliError> {
    if !args.kb.exists() {
        return Err(CliError::Usage(format!(
            "knowledge base {} does not exist",
            args.kb.display()
        )));
    }
    let kb = load_kb(&args.kb)?;
    if args.no_sw && !kb.manifest.flags.no_sw {
        return Err(CliError::Usage(format!(
            "--no-sw needs a knowledge base built with --no-sw; {} was built with sliding-window context",
            args.kb.display()
        )));
    }
    let expected = config.build_hash(kb.manifest.flags, prompts);
    if kb.manifest.build_hash != expected {
        let msg = format!(
            "{} was built with different settings (build hash {}, current config gives {})",
            args.kb.display(),
            short(&kb.manifest.build_hash),
            short(&expected)
        );
        if args.allow_stale {
            log::warn!("{msg}");
        } else {
            return Err(CliError::Integrity(format!("{msg}; rebuild it or pass --allow-stale")));
        }
    }
    Ok(kb)
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn retrieval_config(args: &RetrievalArgs, config: &PipelineConfig) -> structrag_core::RetrievalConfig {
    let mut r = config.retrieval;
    if let Some(mode) = args.mode {
        r.mode = mode;
    }
    r
}

pub fn cmd_query(
    args: &QueryArgs,
    config: &PipelineConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let kb = open_kb(&args.retrieval, config, prompts)?;
    let rc = retrieval_config(&args.retrieval, config);
    let bundle = retrieve(&args.question, &kb, &rc, ablation(&args.retrieval), provider, prompts)?;
    let answer = match generate_answer(bundle, provider, prompts, config.generation_temperature) {
        Ok(a) => a,
        Err(e) => {
            if args.verbose {
                write_out(out, &render_evidence(&e.bundle, &kb))?;
            }
            return Err(CliError::Provider(e.source.to_string()));
        }
    };
    if args.json {
        let text = serde_json::to_string_pretty(&answer).expect("answer serializes");
        return write_out(out, &format!("{text}\n"));
    }
    write_out(out, &format!("{}\n", answer.text))?;
    if let Some(note) = &answer.note {
        write_out(out, &format!("note: {note}\n"))?;
    }
    if args.verbose {
        write_out(out, &render_evidence(&answer.bundle, &kb))?;
    }
    Ok(())
}

fn span_text(kb: &KnowledgeBase, id: &structrag_core::Id, span: structrag_core::Span) -> String {
    let text = kb
        .doc_text(id.doc())
        .and_then(|t| t.get(span.start..span.end))
        .unwrap_or("");
    format!("{}[{}..{}] {:?}", id.doc(), span.start, span.end, text)
}

/// Human-readable evidence listing with provenance.
pub fn render_evidence(bundle: &structrag_core::EvidenceBundle, kb: &KnowledgeBase) -> String {
    let mut s = format!("\nevidence ({} mode, {} tokens)\n", bundle.mode, bundle.token_count());
    let prov = |id: &structrag_core::Id| -> String {
        bundle
            .provenance
            .get(id)
            .map(|spans| {
                spans
                    .iter()
                    .map(|sp| format!("      from {}\n", span_text(kb, id, *sp)))
                    .collect()
            })
            .unwrap_or_default()
    };
    s.push_str(&format!("entities: {}\n", bundle.entities.len()));
    for e in &bundle.entities {
        s.push_str(&format!("  {} {}: {}\n", e.entity_id, e.name, e.summary));
        s.push_str(&prov(&e.entity_id));
    }
    s.push_str(&format!("edges: {}\n", bundle.edges.len()));
    for e in &bundle.edges {
        s.push_str(&format!(
            "  {} ({:.3}) {} | {} | {}\n",
            e.edge_id, e.score, e.source, e.relation, e.target
        ));
        s.push_str(&prov(&e.edge_id));
    }
    s.push_str(&format!("hyperedges: {}\n", bundle.hyperedges.len()));
    for h in &bundle.hyperedges {
        s.push_str(&format!("  {} ({:.3}) {}\n", h.hyperedge_id, h.score, h.statement));
        s.push_str(&prov(&h.hyperedge_id));
    }
    s.push_str(&format!("clusters: {}\n", bundle.clusters.len()));
    for c in &bundle.clusters {
        let mark = if c.truncated { " [truncated]" } else { "" };
        s.push_str(&format!("  {} ({:.3}){mark} {:?}\n", c.ch_id, c.score, c.text));
        s.push_str(&prov(&c.ch_id));
    }
    s
}

pub fn cmd_eval(
    args: &EvalArgs,
    config: &PipelineConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let kb = open_kb(&args.retrieval, config, prompts)?;
    let (pairs, issues) = load_dataset(&args.dataset)?;
    for issue in &issues {
        log::warn!("{}:{}: {}", args.dataset.display(), issue.line, issue.message);
    }
    let ctx = EvalContext {
        kb: &kb,
        retrieval: retrieval_config(&args.retrieval, config),
        ablation: ablation(&args.retrieval),
        provider,
        prompts,
        temperature: config.generation_temperature,
    };
    let report = run_eval(&pairs, &ctx, issues)?;
    write_out(out, &report.to_string())?;
    if let Some(path) = &args.report {
        fs::write(path, report.to_jsonl()).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

pub fn cmd_sweep(
    args: &SweepArgs,
    config: &PipelineConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let kb = open_kb(&args.retrieval, config, prompts)?;
    let (pairs, issues) = load_dataset(&args.dataset)?;
    for issue in &issues {
        log::warn!("{}:{}: {}", args.dataset.display(), issue.line, issue.message);
    }
    let ctx = EvalContext {
        kb: &kb,
        retrieval: retrieval_config(&args.retrieval, config),
        ablation: ablation(&args.retrieval),
        provider,
        prompts,
        temperature: config.generation_temperature,
    };
    let report = sweep_hyperedges(&args.values, &pairs, &ctx)?;
    write_out(out, &report.to_string())?;
    if !report.is_monotone() {
        write_out(out, "warning: candidate counts are not monotone in n_hyperedges\n")?;
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let csv = dir.join("sweep.csv");
        fs::write(&csv, report.to_csv()).map_err(|e| io_error(&csv, e))?;
        let json = dir.join("sweep.json");
        fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(|e| io_error(&json, e))?;
    }
    Ok(())
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !args.kb.exists() {
        return Err(CliError::Usage(format!(
            "knowledge base {} does not exist",
            args.kb.display()
        )));
    }
    let kb = load_kb(&args.kb)?;
    if args.json {
        let text = serde_json::to_string_pretty(&kb.manifest).expect("manifest serializes");
        return write_out(out, &format!("{text}\n"));
    }
    let m = &kb.manifest;
    let mut s = format!(
        "format version {}\nembedding dimension {}\nbuild hash {}\nbuild flags: no_ssc={} no_sw={}\n",
        m.format_version, m.embedding_dimension, m.build_hash, m.flags.no_ssc, m.flags.no_sw
    );
    s.push_str(&format!(
        "{:<20} {:>7} {:>9} {:>11} {:>6} {:>9}\n",
        "document", "chunks", "entities", "hyperedges", "edges", "clusters"
    ));
    for d in &m.documents {
        s.push_str(&format!(
            "{:<20} {:>7} {:>9} {:>11} {:>6} {:>9}\n",
            d.doc_id, d.chunks, d.entities, d.hyperedges, d.edges, d.clusters
        ));
    }
    s.push_str(&format!(
        "{:<20} {:>7} {:>9} {:>11} {:>6} {:>9}\n",
        "total",
        kb.chunks.len(),
        kb.entities.len(),
        kb.hyperedges.len(),
        kb.edges.len(),
        kb.clusters.len()
    ));
    if let Some(name) = &args.entity {
        let key = normalize_name(name);
        let found: Vec<_> = kb
            .entities_named(&key)
            .into_iter()
            .chain(kb.entities_aliased(&key))
            .collect();
        if found.is_empty() {
            s.push_str(&format!("no entity named {name:?}\n"));
        }
        for e in found {
            s.push_str(&format!(
                "\n{} {} (hyperdegree {}, aliases: {})\n  {}\n",
                e.entity_id,
                e.v_name,
                e.hyperdegree,
                if e.aliases.is_empty() {
                    "none".to_string()
                } else {
                    e.aliases.join(", ")
                },
                e.v_text
            ));
            for h in kb.incident_hyperedges(&e.entity_id) {
                s.push_str(&format!("  {} {}\n", h.hyperedge_id, h.h_text));
            }
        }
    }
    write_out(out, &s)
}
