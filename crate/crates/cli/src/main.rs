//! `listrank` command-line tool: BM25 indexing and search, multi-stage LLM reranking,
//! evaluation and run fusion over TREC-format files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use listrank::backend::{Backend, BackendConfig, HttpBackend, MockBackend, MockJudgments};
use listrank::bm25::{Bm25Index, Bm25Params};
use listrank::io_trec::{load_corpus, load_queries, parse_qrels, parse_run, write_run, RunFile, DEFAULT_PRECISION};
use listrank::metrics::{evaluate_run, DEFAULT_REL_THRESHOLD};
use listrank::model::{Corpus, Query};
use listrank::pipeline::{fuse_runs, run_pipeline, FirstStage, FirstStageSource, PipelineSpec, DEFAULT_K_RRF};

const EXIT_PARTIAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "listrank",
    version,
    about = "Listwise and pointwise LLM reranking over TREC files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = Bm25Params::default().k1)]
        k1: f64,
        #[arg(long, default_value_t = Bm25Params::default().b)]
        b: f64,
    },
    /// Retrieve the top k passages per query from an index.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bm25")]
        tag: String,
    },
    /// Run a pipeline config: a first stage followed by reranking stages.
    Rerank {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// First-stage run, required when the config's first stage is `run`.
        #[arg(long)]
        input_run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Error sidecar (JSONL); defaults to `<out>.errors.jsonl`.
        #[arg(long)]
        errors: Option<PathBuf>,
        /// Per-window repair log (JSONL).
        #[arg(long)]
        events: Option<PathBuf>,
        /// `mock:<qrels>` answers from graded judgments instead of the configured endpoint.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, default_value_t = 0)]
        mock_seed: u64,
        /// Noise level of the mock backend, in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        mock_swap_prob: f64,
    },
    /// Compute nDCG@10 and MRR@10 of a run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REL_THRESHOLD)]
        rel_threshold: u32,
        /// Also write the per-query report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Evaluate even if the run's error sidecar lists failed queries.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Reciprocal-rank fusion of runs.
    Fuse {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K_RRF)]
        k_rrf: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "rrf")]
        tag: String,
    },
}

/// Contents of a pipeline config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    pipeline: PipelineSpec,
    backend: Option<BackendConfig>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait OrExit<T> {
    fn usage(self) -> Result<T, Failure>;
    fn io(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }
    fn io(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_IO,
            error: e.into(),
        })
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .io()
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .io()
}

fn read_corpus(path: &Path) -> Result<Corpus, Failure> {
    let loaded = load_corpus(open(path)?)
        .with_context(|| path.display().to_string())
        .io()?;
    Ok(loaded.value)
}

fn read_queries(path: &Path) -> Result<Vec<Query>, Failure> {
    load_queries(open(path)?)
        .with_context(|| path.display().to_string())
        .io()
}

fn read_run(path: &Path) -> Result<RunFile, Failure> {
    parse_run(open(path)?).with_context(|| path.display().to_string()).io()
}

fn save_run(run: &RunFile, path: &Path) -> Result<(), Failure> {
    let mut out = create(path)?;
    write_run(run, DEFAULT_PRECISION, &mut out)
        .and_then(|_| out.flush())
        .io()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), Failure> {
    let mut out = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut out, &row).io()?;
        out.write_all(b"\n").io()?;
    }
    out.flush().io()
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".errors.jsonl");
    PathBuf::from(name)
}

fn make_backend(
    spec: Option<&str>,
    config: Option<BackendConfig>,
    queries: &[Query],
    corpus: &Corpus,
    seed: u64,
    swap_prob: f64,
) -> Result<Box<dyn Backend>, Failure> {
    match spec {
        Some(s) => {
            let path = s
                .strip_prefix("mock:")
                .ok_or_else(|| anyhow!("--backend must be mock:<qrels-file>, got {s:?}"))
                .usage()?;
            let qrels = parse_qrels(open(Path::new(path))?)
                .with_context(|| path.to_string())
                .io()?
                .value;
            let judgments = MockJudgments::from_qrels(queries, corpus, &qrels);
            let mock = if swap_prob != 0.0 {
                MockBackend::with_noise(judgments, seed, swap_prob).usage()?
            } else {
                MockBackend::new(judgments)
            };
            Ok(Box::new(mock))
        }
        None => {
            let config = config
                .ok_or_else(|| anyhow!("config has no [backend] table and no --backend was given"))
                .usage()?;
            Ok(Box::new(HttpBackend::new(config).usage()?))
        }
    }
}

#[derive(Serialize)]
struct RepairRow<'a> {
    qid: &'a str,
    stage: &'a str,
    pass: usize,
    window: usize,
    events: &'a [listrank::listwise::RepairEvent],
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Index { corpus, out, k1, b } => {
            let corpus = read_corpus(&corpus)?;
            let index = Bm25Index::build(&corpus, Bm25Params { k1, b }).usage()?;
            let mut w = create(&out)?;
            serde_json::to_writer(&mut w, &index).io()?;
            w.flush().io()?;
            eprintln!("indexed {} passages (avgdl {:.2})", index.num_docs(), index.avgdl());
        }
        Command::Search {
            index,
            queries,
            k,
            out,
            tag,
        } => {
            if k == 0 {
                return Err(anyhow!("--k must be >= 1")).usage();
            }
            let index: Bm25Index = serde_json::from_reader(open(&index)?)
                .with_context(|| format!("{} is not an index", index.display()))
                .io()?;
            let queries = read_queries(&queries)?;
            let mut run = RunFile::new(tag);
            for q in &queries {
                run.insert(index.search(q, k).usage()?);
            }
            save_run(&run, &out)?;
        }
        Command::Rerank {
            pipeline,
            queries,
            corpus,
            input_run,
            out,
            errors,
            events,
            backend,
            mock_seed,
            mock_swap_prob,
        } => {
            let text = std::fs::read_to_string(&pipeline)
                .with_context(|| format!("cannot read {}", pipeline.display()))
                .io()?;
            let config: Config = toml::from_str(&text)
                .with_context(|| format!("invalid config {}", pipeline.display()))
                .usage()?;
            config.pipeline.validate().usage()?;
            let queries = read_queries(&queries)?;
            let corpus = read_corpus(&corpus)?;

            let ingested;
            let index;
            let source = match config.pipeline.first_stage {
                FirstStage::Run => {
                    let path = input_run
                        .ok_or_else(|| anyhow!("the config's first stage is `run`; pass --input-run"))
                        .usage()?;
                    ingested = read_run(&path)?;
                    FirstStageSource::Run(&ingested)
                }
                FirstStage::Bm25 { k1, b, .. } => {
                    if input_run.is_some() {
                        return Err(anyhow!("--input-run given but the config's first stage is `bm25`")).usage();
                    }
                    index = Bm25Index::build(&corpus, Bm25Params { k1, b }).usage()?;
                    FirstStageSource::Index(&index)
                }
            };
            let backend: Box<dyn Backend> = if config.pipeline.stages.is_empty() {
                Box::new(MockBackend::new(MockJudgments::new()))
            } else {
                make_backend(
                    backend.as_deref(),
                    config.backend,
                    &queries,
                    &corpus,
                    mock_seed,
                    mock_swap_prob,
                )?
            };

            let output = run_pipeline(&config.pipeline, &queries, source, &corpus, backend.as_ref()).usage()?;
            save_run(&output.run, &out)?;
            write_jsonl(&errors.unwrap_or_else(|| sidecar(&out)), &output.failures)?;
            if let Some(path) = events {
                let rows = output.reports.iter().flat_map(|(qid, stages)| {
                    stages.iter().flat_map(move |s| {
                        s.repairs.iter().map(move |r| RepairRow {
                            qid: qid.as_str(),
                            stage: &s.stage,
                            pass: r.pass,
                            window: r.window,
                            events: &r.events,
                        })
                    })
                });
                write_jsonl(&path, rows)?;
            }

            for (i, stage) in config.pipeline.stages.iter().enumerate() {
                let calls: usize = output
                    .reports
                    .values()
                    .filter_map(|r| r.get(i))
                    .map(|s| s.backend_calls)
                    .sum();
                eprintln!(
                    "stage {} ({}, top {}): {calls} backend calls",
                    i + 1,
                    stage.reranker,
                    stage.top_k
                );
            }
            let total = output.run.len() + output.failures.len();
            if !output.failures.is_empty() {
                eprintln!(
                    "{} of {total} queries failed; see the error sidecar",
                    output.failures.len()
                );
                return Ok(if output.run.is_empty() { EXIT_IO } else { EXIT_PARTIAL });
            }
        }
        Command::Evaluate {
            run,
            qrels,
            rel_threshold,
            json,
            allow_partial,
        } => {
            let errors = sidecar(&run);
            let failed = std::fs::read_to_string(&errors)
                .map(|t| t.lines().filter(|l| !l.trim().is_empty()).count())
                .unwrap_or(0);
            if failed > 0 && !allow_partial {
                eprintln!(
                    "{} lists {failed} failed queries; refusing to evaluate a partial run (use --allow-partial)",
                    errors.display()
                );
                return Ok(EXIT_PARTIAL);
            }
            let run = read_run(&run)?;
            let qrels = parse_qrels(open(&qrels)?)
                .with_context(|| qrels.display().to_string())
                .io()?
                .value;
            let report = evaluate_run(&run, &qrels, rel_threshold);
            if !report.skipped.is_empty() {
                eprintln!(
                    "{} run queries have no judgments and were skipped",
                    report.skipped.len()
                );
            }
            print!("{}", report.to_table());
            if let Some(path) = json {
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &report).io()?;
                w.write_all(b"\n").and_then(|_| w.flush()).io()?;
            }
        }
        Command::Fuse { runs, k_rrf, out, tag } => {
            let runs = runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>, _>>()?;
            let fused = fuse_runs(&runs, k_rrf, &tag).usage()?;
            save_run(&fused, &out)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
