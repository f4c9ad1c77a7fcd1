//! Command implementations behind the `dotlink` binary.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dotlink_core::evaluator::{self, EvalError, Metric};
use dotlink_core::graph::{self, graph_metrics, GraphMetrics, KnowledgeGraph};
use dotlink_core::indexer::{self, merge_audit, AuditBin, Document, MergeCandidate};
use dotlink_core::{Engine, EngineConfig};

/// Config copy written next to an indexed graph; used when no `--config` is given.
pub const GRAPH_CONFIG_FILE: &str = "config.toml";
pub const INDEX_LOG_FILE: &str = "index_log.json";
pub const MERGE_CANDIDATES_FILE: &str = "merge_candidates.jsonl";

#[derive(Debug, Parser)]
#[command(name = "dotlink", version, about = "Graph-based retrieval-augmented generation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random projection and sampling step
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on concurrent provider calls.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a knowledge graph from a directory of text files.
    Index(IndexArgs),
    /// Answer a question against an indexed graph.
    Query(QueryArgs),
    /// Print structural statistics of a graph as CSV.
    GraphStats(GraphArgs),
    /// Run the evaluation suite over a question file.
    Eval(EvalArgs),
    /// Histogram of merge-judge verdicts by similarity.
    MergeAudit(MergeAuditArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "GRAPHDIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub gate_threshold: Option<f64>,
    #[arg(long)]
    pub chunk_tokens: Option<usize>,
    #[arg(long)]
    pub overlap_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct QueryOverrides {
    /// Entry entities and relations taken per level.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Minimum semantic score kept after pruning
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the relation affinity in the semantic score
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the endpoint entity affinity in the semantic score
    #[arg(long)]
    pub beta: Option<f64>,
    /// PageRank damping factor
    #[arg(long)]
    pub damping: Option<f64>,
    /// Chunks handed to the generator.
    #[arg(long)]
    pub chunk_k: Option<usize>,
    /// Context budget in whitespace tokens.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Graph-only context: no source chunks.
    #[arg(long)]
    pub kg_only: bool,
    /// Keep the whole evidence subgraph.
    #[arg(long)]
    pub no_eliminate: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Directory written by `dotlink index`
    #[arg(long, value_name = "GRAPHDIR")]
    pub graph: PathBuf,
    pub question: String,
    #[command(flatten)]
    pub overrides: QueryOverrides,
    /// Write cues, evidence subgraph and elimination verdicts as JSON.
    #[arg(long, value_name = "FILE")]
    pub emit_subgraph: Option<PathBuf>,
    /// Write the assembled context.
    #[arg(long, value_name = "FILE")]
    pub emit_context: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Directory written by `dotlink index`
    #[arg(long, value_name = "GRAPHDIR")]
    pub graph: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `dotlink index`
    #[arg(long, value_name = "GRAPHDIR")]
    pub graph: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub questions: PathBuf,
    /// Comma-separated metric names; all metrics when absent.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Directory for report.json and report.csv.
    #[arg(long, value_name = "DIR", default_value = "eval_report")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: QueryOverrides,
}

#[derive(Debug, Args)]
pub struct MergeAuditArgs {
    /// Directory written by `dotlink index`
    #[arg(long, value_name = "GRAPHDIR")]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// CSV destination; standard output when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Process outcome: 0 success, 1 partial success, 2 usage, configuration or I/O failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
    pub code: u8,
}

impl CliError {
    fn fatal(category: &'static str, message: impl fmt::Display) -> Self {
        Self {
            category,
            message: message.to_string(),
            code: 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.category, self.message)
    }
}

impl std::error::Error for CliError {}

fn io_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::fatal("io", format!("{}: {e}", path.display()))
}

/// Config layers, lowest first: built-in defaults, then `--config` (or the copy stored in the
/// graph directory), then command-line flags.
pub fn resolve_config(
    global: &GlobalArgs,
    graph_dir: Option<&Path>,
    overrides: Option<&QueryOverrides>,
) -> Result<EngineConfig, CliError> {
    let stored = graph_dir.map(|d| d.join(GRAPH_CONFIG_FILE)).filter(|p| p.is_file());
    let mut cfg = match global.config.as_deref().map(Path::to_path_buf).or(stored) {
        Some(path) => EngineConfig::load(&path).map_err(|e| CliError::fatal("config", e))?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(p) = global.parallelism {
        cfg.parallelism = p;
    }
    if let Some(o) = overrides {
        apply_overrides(&mut cfg, o);
    }
    cfg.validate().map_err(|e| CliError::fatal("config", e))?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut EngineConfig, o: &QueryOverrides) {
    let nav = &mut cfg.navigation;
    if let Some(k) = o.top_k {
        nav.top_k_entries = k;
    }
    if let Some(v) = o.tau {
        nav.tau = v;
    }
    if let Some(v) = o.alpha {
        nav.alpha = v;
    }
    if let Some(v) = o.beta {
        nav.beta = v;
    }
    if let Some(v) = o.damping {
        nav.damping = v;
    }
    if let Some(k) = o.chunk_k {
        cfg.chunk_top_k = k;
    }
    if let Some(b) = o.budget {
        cfg.context_budget = b;
    }
    if o.kg_only {
        cfg.chunk_top_k = 0;
    }
    if o.no_eliminate {
        cfg.skip_elimination = true;
    }
}

/// Regular files of `dir` in name order, as documents keyed by file name.
pub fn read_corpus(dir: &Path) -> Result<Vec<Document>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::fatal("io", format!("corpus not found: {}", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut docs = Vec::new();
    for p in paths {
        let bytes = fs::read(&p).map_err(|e| io_error(&p, e))?;
        let Ok(text) = String::from_utf8(bytes) else {
            tracing::warn!(path = %p.display(), "skipping non-UTF-8 file");
            continue;
        };
        let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        docs.push(Document::new(&id, &text));
    }
    if docs.is_empty() {
        return Err(CliError::fatal("io", format!("corpus has no text files: {}", dir.display())));
    }
    Ok(docs)
}

pub fn load_graph(dir: &Path) -> Result<KnowledgeGraph, CliError> {
    if !dir.is_dir() {
        return Err(CliError::fatal("io", format!("graph not found: {}", dir.display())));
    }
    graph::load(dir).map_err(|e| CliError::fatal("graph", e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn json_lines<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("records serialize") + "\n")
        .collect()
}

pub fn cmd_index(global: &GlobalArgs, args: &IndexArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let mut cfg = resolve_config(global, None, None)?;
    if let Some(g) = args.gate_threshold {
        cfg.gate_threshold = g;
    }
    if let Some(n) = args.chunk_tokens {
        cfg.chunking.chunk_tokens = n;
    }
    if let Some(n) = args.overlap_tokens {
        cfg.chunking.overlap_tokens = n;
    }
    cfg.validate().map_err(|e| CliError::fatal("config", e))?;
    let docs = read_corpus(&args.corpus)?;
    let gateway = cfg.gateway();
    let outcome = indexer::index(&docs, &cfg.index_config(), &gateway).map_err(|e| CliError::fatal("index", e))?;
    graph::persist(&outcome.graph, &args.out).map_err(|e| CliError::fatal("io", e))?;
    write_file(&args.out.join(GRAPH_CONFIG_FILE), &cfg.to_toml_string())?;
    let log = serde_json::to_string_pretty(&outcome.report).expect("report serializes") + "\n";
    write_file(&args.out.join(INDEX_LOG_FILE), &log)?;
    write_file(
        &args.out.join(MERGE_CANDIDATES_FILE),
        &json_lines(&outcome.report.merge.candidates),
    )?;
    let r = &outcome.report;
    writeln!(
        out,
        "indexed {} documents into {} chunks: {} entities, {} relations ({} extraction failures, {} merged groups)",
        r.documents,
        r.chunks,
        outcome.graph.entity_count(),
        outcome.graph.relation_count(),
        r.extraction_failures,
        r.merge.merged_groups,
    )
    .map_err(|e| io_error(Path::new("<stdout>"), e))?;
    Ok(Outcome::Success)
}

pub fn cmd_query(global: &GlobalArgs, args: &QueryArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let graph = load_graph(&args.graph)?;
    let cfg = resolve_config(global, Some(&args.graph), Some(&args.overrides))?;
    let engine = Engine::new(&graph, &cfg, cfg.gateway()).map_err(|e| CliError::fatal("query", e))?;
    let trace = engine.query(&args.question).map_err(|e| CliError::fatal("query", e))?;
    if let Some(path) = &args.emit_subgraph {
        let doc = serde_json::json!({
            "query": trace.query,
            "cues": trace.cues,
            "subgraph": trace.subgraph,
            "refined": trace.refined,
            "chunks": trace.chunks,
        });
        write_file(path, &(serde_json::to_string_pretty(&doc).expect("trace serializes") + "\n"))?;
    }
    if let Some(path) = &args.emit_context {
        let mut text = trace.context.text();
        if !text.is_empty() {
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    writeln!(out, "{}", trace.answer.text).map_err(|e| io_error(Path::new("<stdout>"), e))?;
    Ok(Outcome::Success)
}

pub fn stats_table(m: &GraphMetrics) -> String {
    format!("{}\n{}\n", GraphMetrics::CSV_HEADER, m.csv_row())
}

pub fn cmd_graph_stats(args: &GraphArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let graph = load_graph(&args.graph)?;
    out.write_all(stats_table(&graph_metrics(&graph)).as_bytes())
        .map_err(|e| io_error(Path::new("<stdout>"), e))?;
    Ok(Outcome::Success)
}

pub fn cmd_eval(global: &GlobalArgs, args: &EvalArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let graph = load_graph(&args.graph)?;
    let mut cfg = resolve_config(global, Some(&args.graph), Some(&args.overrides))?;
    if let Some(names) = &args.metrics {
        cfg.evaluation.metrics = names
            .iter()
            .filter(|n| !n.trim().is_empty())
            .map(|n| n.parse::<Metric>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::fatal("usage", e))?;
    }
    let text = fs::read_to_string(&args.questions).map_err(|e| io_error(&args.questions, e))?;
    let questions = evaluator::parse_questions(&text);
    let engine = Engine::new(&graph, &cfg, cfg.gateway()).map_err(|e| CliError::fatal("eval", e))?;
    let report = match evaluator::run_benchmark(&questions, &engine, engine.gateway(), &cfg.evaluation) {
        Ok(r) => r,
        Err(e @ EvalError::AllItemsFailed(_)) => {
            return Err(CliError {
                category: "eval",
                message: e.to_string(),
                code: 1,
            })
        }
        Err(e) => return Err(CliError::fatal("eval", e)),
    };
    report.write(&args.out).map_err(|e| io_error(&args.out, e))?;
    out.write_all(report.to_csv().as_bytes())
        .map_err(|e| io_error(Path::new("<stdout>"), e))?;
    if report.failures > 0 {
        tracing::warn!(failures = report.failures, "some items failed");
        Ok(Outcome::Partial)
    } else {
        Ok(Outcome::Success)
    }
}

pub fn audit_csv(bins: &[AuditBin]) -> String {
    let mut s = format!("{}\n", AuditBin::CSV_HEADER);
    for b in bins {
        s.push_str(&b.csv_row());
        s.push('\n');
    }
    s
}

pub fn cmd_merge_audit(args: &MergeAuditArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let graph = load_graph(&args.graph)?;
    let path = args.graph.join(MERGE_CANDIDATES_FILE);
    let candidates: Vec<MergeCandidate> = if path.is_file() {
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| CliError::fatal("graph", format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let gate = graph_gate(&args.graph).unwrap_or(indexer::merge::DEFAULT_GATE_THRESHOLD);
    drop(graph);
    let csv = audit_csv(&merge_audit(&candidates, gate, args.bins));
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => out
            .write_all(csv.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e))?,
    }
    Ok(Outcome::Success)
}

/// Gate threshold recorded in the index log, when present.
fn graph_gate(dir: &Path) -> Option<f64> {
    let text = fs::read_to_string(dir.join(INDEX_LOG_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("merge")?.get("gate_threshold")?.as_f64()
}

pub fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Index(a) => cmd_index(&cli.global, a, out),
        Command::Query(a) => cmd_query(&cli.global, a, out),
        Command::GraphStats(a) => cmd_graph_stats(a, out),
        Command::Eval(a) => cmd_eval(&cli.global, a, out),
        Command::MergeAudit(a) => cmd_merge_audit(a, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("dotlink").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn three_layer_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "seed = 5\n[navigation]\ntau = 0.2\nalpha = 0.7\n").unwrap();
        let file_arg = file.to_str().unwrap();

        let none = parse(&["query", "--graph", "g", "q"]);
        let Command::Query(q) = &none.command else { unreachable!() };
        let cfg = resolve_config(&none.global, None, Some(&q.overrides)).unwrap();
        assert_eq!((cfg.seed, cfg.navigation.tau, cfg.navigation.alpha), (0, 0.35, 0.5));

        let from_file = parse(&["--config", file_arg, "query", "--graph", "g", "q"]);
        let Command::Query(q) = &from_file.command else { unreachable!() };
        let cfg = resolve_config(&from_file.global, None, Some(&q.overrides)).unwrap();
        assert_eq!((cfg.seed, cfg.navigation.tau, cfg.navigation.alpha), (5, 0.2, 0.7));
        assert_eq!(cfg.navigation.beta, 0.4);

        let flagged = parse(&["--config", file_arg, "--seed", "9", "query", "--graph", "g", "--tau", "0.3", "q"]);
        let Command::Query(q) = &flagged.command else { unreachable!() };
        let cfg = resolve_config(&flagged.global, None, Some(&q.overrides)).unwrap();
        assert_eq!((cfg.seed, cfg.navigation.tau, cfg.navigation.alpha), (9, 0.3, 0.7));
    }

    #[test]
    fn kg_only_zeroes_chunks() {
        let cli = parse(&["query", "--graph", "g", "--kg-only", "--chunk-k", "3", "q"]);
        let Command::Query(q) = &cli.command else { unreachable!() };
        let cfg = resolve_config(&cli.global, None, Some(&q.overrides)).unwrap();
        assert_eq!(cfg.chunk_top_k, 0);
    }

    #[test]
    fn bad_config_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "seed = \"x\"\n").unwrap();
        let cli = parse(&["--config", file.to_str().unwrap(), "graph-stats", "--graph", "g"]);
        let err = resolve_config(&cli.global, None, None).unwrap_err();
        assert_eq!(err.code, 2);
        assert_eq!(err.category, "config");
        assert!(err.message.contains("line 1"), "{}", err.message);
    }

    #[test]
    fn empty_audit_has_only_a_header() {
        assert_eq!(audit_csv(&[]), "bin_low,bin_high,merged,skipped\n");
    }
}
