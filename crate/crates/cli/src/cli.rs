use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use graphmem_core::eval::{
    self, read_corpus, read_queries, run_ablation, run_expansion, run_qa_eval, run_retrieval_eval, DenseEval,
    ExpansionConfig, ExpansionMetric, PipelineEval,
};
use graphmem_core::ppr::{dense_ppr_oracle, max_abs_diff, ORACLE_NODE_LIMIT};
use graphmem_core::reset::ResetVector;
use graphmem_core::{build_index, save_index, EvalReport, GraphMemConfig, LinkMode, NodeId, RetrievalConfig};

use crate::app::{self, Loaded};
use crate::service::{self, AppState};

/// Graph-memory passage retrieval.
#[derive(Debug, Parser)]
#[command(name = "graphmem", version)]
pub struct Cli {
    /// JSON config file; endpoint environment variables are applied on top.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an index directory from a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank passages for one query.
    Retrieve(RetrieveArgs),
    /// Run an evaluation and write a report plus per-query JSONL.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Print graph counts of an index.
    Stats {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Cross-check the iterative PageRank solver against the dense solve.
    Verify {
        #[arg(long)]
        index: PathBuf,
        /// Also check the reset vector built for this query.
        #[arg(long)]
        query: Vec<String>,
    },
    /// Serve the index over HTTP.
    Serve {
        #[arg(long)]
        index: PathBuf,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Dataset preparation.
    #[command(subcommand)]
    Prep(PrepCommand),
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub link_mode: Option<LinkMode>,
    #[command(flatten)]
    pub ppr: PprFlags,
    /// Compare the solver with the dense solve for this query's reset vector.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct PprFlags {
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub ppr_tol: Option<f64>,
    #[arg(long)]
    pub ppr_max_iter: Option<usize>,
    #[arg(long)]
    pub passage_weight: Option<f64>,
}

impl PprFlags {
    fn apply(&self, c: &mut RetrievalConfig) {
        if let Some(d) = self.damping {
            c.ppr.damping = d;
        }
        if let Some(t) = self.ppr_tol {
            c.ppr.tolerance = t;
        }
        if let Some(m) = self.ppr_max_iter {
            c.ppr.max_iterations = m;
        }
        if let Some(w) = self.passage_weight {
            c.passage_weight = w;
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalIo {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Report JSON; per-query records go next to it with a `.jsonl` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub link_mode: Option<LinkMode>,
    #[command(flatten)]
    pub ppr: PprFlags,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum MetricArg {
    Recall5,
    F1,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// recall@2 and recall@5 of the pipeline, or of dense ranking with --dense.
    Retrieval {
        #[command(flatten)]
        io: EvalIo,
        #[arg(long)]
        dense: bool,
    },
    /// Exact match and token F1 of the configured reader.
    Qa {
        #[command(flatten)]
        io: EvalIo,
    },
    /// Metric curve while distractor segments are added to the corpus.
    Expansion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        segments: usize,
        #[arg(long)]
        incremental: bool,
        #[arg(long, value_enum, default_value = "recall5")]
        metric: MetricArg,
    },
    /// One retrieval report per mode, e.g. `--mode link=ner --mode filter=off`.
    Ablation {
        #[command(flatten)]
        io: EvalIo,
        #[arg(long = "mode")]
        modes: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PrepCommand {
    /// Split long documents into fixed-size word chunks.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        chunk_words: usize,
    },
}

const DEFAULT_ABLATIONS: [&str; 5] = ["link=triple", "link=ner", "link=node", "filter=off", "passage_nodes=off"];

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = GraphMemConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Index { corpus, out } => cmd_index(&config, &corpus, &out),
        Command::Retrieve(args) => cmd_retrieve(&config, &args),
        Command::Eval(cmd) => cmd_eval(&config, cmd),
        Command::Stats { index, json } => cmd_stats(&index, json),
        Command::Verify { index, query } => cmd_verify(&config, &index, &query),
        Command::Serve { index, bind } => {
            let loaded = app::load(&index, &config)?;
            let bind = bind.unwrap_or_else(|| config.service.bind.clone());
            service::serve(AppState::new(loaded, &config.service), &bind)
        }
        Command::Prep(PrepCommand::Segment {
            input,
            output,
            chunk_words,
        }) => {
            let docs = read_corpus(&input)?;
            let chunks = eval::segment_documents(&docs, chunk_words)?;
            write_lines(&output, &chunks)?;
            println!("{} documents -> {} passages", docs.len(), chunks.len());
            Ok(())
        }
    }
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_index(config: &GraphMemConfig, corpus: &Path, out: &Path) -> anyhow::Result<()> {
    let records = read_corpus(corpus)?;
    let (index, report) = build_index(&records, &config.index, config.embedding.build()?, config.extraction.build()?)?;
    let manifest = save_index(&index, out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("fingerprint: {}", manifest.fingerprint());
    Ok(())
}

fn retrieval_config(loaded: &Loaded, top_k: Option<usize>, link_mode: Option<LinkMode>, ppr: &PprFlags) -> RetrievalConfig {
    let mut c = loaded.defaults.clone();
    if let Some(k) = top_k {
        c.top_k = k;
    }
    if let Some(m) = link_mode {
        c.link_mode = m;
    }
    ppr.apply(&mut c);
    c
}

fn cmd_retrieve(config: &GraphMemConfig, args: &RetrieveArgs) -> anyhow::Result<()> {
    let loaded = app::load(&args.index, config)?;
    let rc = retrieval_config(&loaded, args.top_k, args.link_mode, &args.ppr);
    let response = app::retrieve(&loaded.retriever, &args.query, &rc)?;
    if args.json {
        println!("{}", serde_json::to_string(&response)?);
    } else {
        for p in &response.passages {
            println!("{:>3}  {:.6}  {}  {}", p.rank, p.score, p.doc_id, p.title.as_deref().unwrap_or(""));
        }
        eprintln!(
            "provenance: {:?}, {} ppr iterations, {:.2} ms",
            response.provenance, response.diagnostics.ppr_iterations, response.timing_ms.total
        );
    }
    if args.verify {
        match loaded.retriever.reset_vector(&args.query, &rc)? {
            Some(reset) => {
                let diff = verify_reset(&loaded, &reset, &rc)?;
                eprintln!("oracle agreement: max L∞ diff < 1e-8 ({diff:.3e})");
            }
            None => eprintln!("verify: query falls back to dense ranking, no reset vector to check"),
        }
    }
    Ok(())
}

const ORACLE_TOLERANCE: f64 = 1e-8;

fn verify_reset(loaded: &Loaded, reset: &ResetVector, rc: &RetrievalConfig) -> anyhow::Result<f64> {
    let kg = &loaded.retriever.index().kg;
    let adjacency = if rc.passage_nodes { kg.adjacency() } else { kg.phrase_adjacency() };
    let iterative = graphmem_core::run_ppr(adjacency, reset, &rc.ppr)?;
    let oracle = dense_ppr_oracle(adjacency, reset, rc.ppr.damping)?;
    let diff = max_abs_diff(&iterative.scores, &oracle);
    if diff >= ORACLE_TOLERANCE {
        bail!("oracle disagreement: max L∞ diff {diff:.3e} >= {ORACLE_TOLERANCE:e}");
    }
    Ok(diff)
}

fn cmd_verify(config: &GraphMemConfig, index: &Path, queries: &[String]) -> anyhow::Result<()> {
    let loaded = app::load(index, config)?;
    let nodes = loaded.retriever.index().kg.node_count();
    if nodes > ORACLE_NODE_LIMIT {
        bail!("index has {nodes} nodes; the dense oracle is limited to {ORACLE_NODE_LIMIT}");
    }
    let rc = &loaded.defaults;
    // uniform restart over passages, then one vector per query
    let uniform: Vec<(NodeId, f64)> = loaded.retriever.index().passages.ids().iter().map(|&id| (NodeId(id), 1.0)).collect();
    let mut resets = vec![ResetVector::from_scores(&uniform)?];
    for q in queries {
        if let Some(r) = loaded.retriever.reset_vector(q, rc)? {
            resets.push(r);
        }
    }
    let mut worst: f64 = 0.0;
    for r in &resets {
        worst = worst.max(verify_reset(&loaded, r, rc)?);
    }
    println!("checked {} reset vectors on {nodes} nodes (max diff {worst:.3e})", resets.len());
    println!("oracle agreement: max L∞ diff < 1e-8");
    Ok(())
}

fn cmd_stats(index: &Path, json: bool) -> anyhow::Result<()> {
    let manifest = graphmem_core::persist::read_manifest(index)?;
    let (index, _) = graphmem_core::load_index(index)?;
    let stats = index.stats();
    if json {
        println!("{}", serde_json::to_string(&stats)?);
    } else {
        println!("phrase nodes     {}", stats.phrase_nodes);
        println!("passage nodes    {}", stats.passage_nodes);
        println!("total nodes      {}", stats.total_nodes);
        println!("relation edges   {}", stats.relation_edges);
        println!("synonym edges    {}", stats.synonym_edges);
        println!("context edges    {}", stats.context_edges);
        println!("total edges      {}", stats.total_edges);
        println!("triples          {}", stats.triples);
        println!("fingerprint      {}", manifest.fingerprint());
    }
    Ok(())
}

fn sidecar(out: &Path, suffix: Option<usize>) -> PathBuf {
    match suffix {
        None => out.with_extension("jsonl"),
        Some(i) => out.with_extension(format!("{i}.jsonl")),
    }
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> anyhow::Result<()> {
    let summaries: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "label": r.label,
                "config_fingerprint": r.config_fingerprint,
                "aggregates": r.aggregates,
            })
        })
        .collect();
    if reports.len() == 1 {
        std::fs::write(out, serde_json::to_string_pretty(&summaries[0])?)?;
        reports[0].write_jsonl(&sidecar(out, None))?;
    } else {
        std::fs::write(out, serde_json::to_string_pretty(&summaries)?)?;
        for (i, r) in reports.iter().enumerate() {
            r.write_jsonl(&sidecar(out, Some(i)))?;
        }
    }
    for s in &summaries {
        println!("{s}");
    }
    let missing: usize = reports.iter().map(|r| r.aggregates.excluded).sum();
    if reports.iter().any(EvalReport::has_missing_gold) {
        bail!("{missing} query evaluations reference gold passages absent from the index");
    }
    Ok(())
}

fn cmd_eval(config: &GraphMemConfig, cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Retrieval { io, dense } => {
            let loaded = app::load(&io.index, config)?;
            let queries = read_queries(&io.queries)?;
            let rc = retrieval_config(&loaded, None, io.link_mode, &io.ppr);
            let report = if dense {
                run_retrieval_eval(&DenseEval(&loaded.retriever), &queries, "dense", String::new())
            } else {
                let target = PipelineEval {
                    retriever: &loaded.retriever,
                    config: rc.clone(),
                };
                run_retrieval_eval(&target, &queries, "pipeline", eval::config_fingerprint(&rc))
            };
            write_reports(&io.out, &[report])
        }
        EvalCommand::Qa { io } => {
            let loaded = app::load(&io.index, config)?;
            let queries = read_queries(&io.queries)?;
            let rc = retrieval_config(&loaded, None, io.link_mode, &io.ppr);
            let reader = config.reader.build()?;
            let report = run_qa_eval(&loaded.retriever, &rc, &queries, reader.as_ref(), "qa")?;
            write_reports(&io.out, &[report])
        }
        EvalCommand::Expansion {
            corpus,
            queries,
            out,
            segments,
            incremental,
            metric,
        } => {
            let corpus = read_corpus(&corpus)?;
            let queries = read_queries(&queries)?;
            let cfg = ExpansionConfig {
                segments,
                incremental,
                metric: match metric {
                    MetricArg::Recall5 => ExpansionMetric::RecallAt5,
                    MetricArg::F1 => ExpansionMetric::F1,
                },
                index: config.index.clone(),
                retrieval: config.retrieval.clone(),
            };
            let reader = config.reader.build()?;
            let curve = run_expansion(
                &corpus,
                &queries,
                &cfg,
                config.embedding.build()?,
                config.extraction.build()?,
                Some(reader.as_ref()),
            )?;
            let text = serde_json::to_string_pretty(&curve)?;
            std::fs::write(&out, &text)?;
            println!("{text}");
            Ok(())
        }
        EvalCommand::Ablation { io, modes } => {
            let loaded = app::load(&io.index, config)?;
            let queries = read_queries(&io.queries)?;
            let rc = retrieval_config(&loaded, None, io.link_mode, &io.ppr);
            let modes = if modes.is_empty() {
                DEFAULT_ABLATIONS.iter().map(|s| s.to_string()).collect()
            } else {
                modes
            };
            let reports = run_ablation(&loaded.retriever, &rc, &queries, &modes)?;
            write_reports(&io.out, &reports)
        }
    }
}

/// Exit status for an error returned by [`run`]: 2 for usage errors, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<graphmem_core::Error>() {
        Some(graphmem_core::Error::Usage(_)) => 2,
        _ => 1,
    }
}

/// One-line JSON error for stderr.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    use graphmem_core::Error as E;
    let kind = match err.downcast_ref::<E>() {
        Some(E::Validation(_)) => "validation",
        Some(E::Conflict(_)) => "conflict",
        Some(E::NotFound(_)) => "not_found",
        Some(E::Precondition(_)) => "precondition",
        Some(E::Config(_)) => "config",
        Some(E::Usage(_)) => "usage",
        Some(E::Format { .. }) => "format",
        Some(E::Provider { .. }) => "provider",
        Some(E::DegenerateReset) => "degenerate_reset",
        Some(E::OracleTooLarge { .. }) => "oracle_too_large",
        Some(E::Io(_)) => "io",
        Some(E::Json(_)) => "json",
        None => "runtime",
    };
    serde_json::json!({ "error": kind, "message": format!("{err:#}") })
}
