//! Multi-stage pipelines: a first stage (BM25 or an ingested run) followed by any number of
//! listwise / pointwise reranking stages, each over the top `top_k` of the previous stage.
//!
//! Entries below a stage's `top_k` keep their relative order behind the reranked block, and
//! after every stage the whole list is rescored with [`assign_scores`]. Queries run on a
//! bounded worker pool sharing one backend; a failing query is dropped from the output run and
//! reported instead.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, DecodeParams};
use crate::bm25::{Bm25Index, Bm25Params};
use crate::error::{Error, Result};
use crate::io_trec::RunFile;
use crate::listwise::{assign_scores, rerank_listwise, ListwiseConfig, WindowRepairs};
use crate::model::{Candidate, Corpus, PassageId, Query, QueryId, RankedList};
use crate::pointwise::rerank_pointwise;
use crate::prompts::{PromptBudget, MAX_LISTWISE_PASSAGES};
use crate::window::window_count;

pub const DEFAULT_K_RRF: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankerKind {
    /// Listwise, through progressive windows.
    Lrl,
    /// Pointwise, by P(True).
    Prl,
}

impl std::fmt::Display for RerankerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RerankerKind::Lrl => "lrl",
            RerankerKind::Prl => "prl",
        })
    }
}

fn default_window_m() -> usize {
    crate::listwise::DEFAULT_WINDOW_SIZE
}
fn default_passes() -> usize {
    1
}
fn default_first_k() -> usize {
    100
}
fn default_k1() -> f64 {
    Bm25Params::default().k1
}
fn default_b() -> f64 {
    Bm25Params::default().b
}
fn default_workers() -> usize {
    4
}
fn default_tag() -> String {
    "listrank".into()
}
fn default_listwise_params() -> DecodeParams {
    DecodeParams::listwise()
}
fn default_pointwise_params() -> DecodeParams {
    DecodeParams::pointwise()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub reranker: RerankerKind,
    pub top_k: usize,
    #[serde(default = "default_window_m")]
    pub window_m: usize,
    #[serde(default = "default_passes")]
    pub passes: usize,
}

impl StageSpec {
    pub fn lrl(top_k: usize, window_m: usize, passes: usize) -> Self {
        Self {
            reranker: RerankerKind::Lrl,
            top_k,
            window_m,
            passes,
        }
    }

    pub fn prl(top_k: usize) -> Self {
        Self {
            reranker: RerankerKind::Prl,
            top_k,
            window_m: default_window_m(),
            passes: 1,
        }
    }

    /// Backend calls this stage makes for a list of `n` entries (mock backends; an HTTP
    /// backend may add one retry per unparseable listwise answer).
    pub fn expected_calls(&self, n: usize) -> Result<usize> {
        let depth = self.top_k.min(n);
        Ok(match self.reranker {
            RerankerKind::Prl => depth,
            RerankerKind::Lrl => window_count(depth, self.window_m)? * self.passes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FirstStage {
    Bm25 {
        #[serde(default = "default_first_k")]
        k: usize,
        #[serde(default = "default_k1")]
        k1: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// Lists come from an ingested run file.
    Run,
}

impl Default for FirstStage {
    fn default() -> Self {
        FirstStage::Bm25 {
            k: default_first_k(),
            k1: default_k1(),
            b: default_b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    #[serde(default)]
    pub first_stage: FirstStage,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
    #[serde(default = "default_tag")]
    pub tag: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub budget: PromptBudget,
    #[serde(default = "default_listwise_params")]
    pub listwise_params: DecodeParams,
    #[serde(default = "default_pointwise_params")]
    pub pointwise_params: DecodeParams,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            first_stage: FirstStage::default(),
            stages: Vec::new(),
            tag: default_tag(),
            workers: default_workers(),
            budget: PromptBudget::default(),
            listwise_params: DecodeParams::listwise(),
            pointwise_params: DecodeParams::pointwise(),
        }
    }
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        if let FirstStage::Bm25 { k, k1, b } = self.first_stage {
            if k == 0 {
                return Err(Error::Param("first-stage depth k must be >= 1".into()));
            }
            Bm25Params { k1, b }.validate()?;
        }
        if self.tag.is_empty() || self.tag.chars().any(char::is_whitespace) {
            return Err(Error::Param(format!("invalid run tag {:?}", self.tag)));
        }
        if self.workers == 0 {
            return Err(Error::Param("workers must be >= 1".into()));
        }
        self.budget.validate()?;
        self.listwise_params.validate()?;
        self.pointwise_params.validate()?;
        let mut prev = usize::MAX;
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            if s.top_k == 0 {
                return Err(Error::Param(format!("stage {n}: top_k must be >= 1")));
            }
            if s.top_k > prev {
                return Err(Error::Param(format!(
                    "stage {n}: top_k {} exceeds previous stage's {prev}",
                    s.top_k
                )));
            }
            prev = s.top_k;
            if s.reranker == RerankerKind::Lrl {
                if !(2..=MAX_LISTWISE_PASSAGES).contains(&s.window_m) {
                    return Err(Error::Param(format!(
                        "stage {n}: window_m must be in 2..={MAX_LISTWISE_PASSAGES}, got {}",
                        s.window_m
                    )));
                }
                if s.passes == 0 {
                    return Err(Error::Param(format!("stage {n}: passes must be >= 1")));
                }
            }
        }
        Ok(())
    }
}

/// Where first-stage lists come from.
#[derive(Debug, Clone, Copy)]
pub enum FirstStageSource<'a> {
    Index(&'a Bm25Index),
    Run(&'a RunFile),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub qid: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub depth: usize,
    pub backend_calls: usize,
    pub unanswered: usize,
    pub repairs: Vec<WindowRepairs>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub run: RunFile,
    pub failures: Vec<QueryFailure>,
    pub reports: BTreeMap<QueryId, Vec<StageReport>>,
}

impl PipelineOutput {
    pub fn total_backend_calls(&self) -> usize {
        self.reports
            .values()
            .flat_map(|r| r.iter().map(|s| s.backend_calls))
            .sum()
    }
}

fn stage_label(i: usize, stage: &StageSpec) -> String {
    format!("stage{}:{}", i + 1, stage.reranker)
}

fn run_stages(
    spec: &PipelineSpec,
    query: &Query,
    first: RankedList,
    corpus: &Corpus,
    backend: &dyn Backend,
) -> std::result::Result<(RankedList, Vec<StageReport>), QueryFailure> {
    let mut entries = first.entries;
    let mut reports = Vec::with_capacity(spec.stages.len());
    for (i, stage) in spec.stages.iter().enumerate() {
        let label = stage_label(i, stage);
        let fail = |e: Error| QueryFailure {
            qid: query.id.to_string(),
            stage: label.clone(),
            error: e.to_string(),
        };
        let n = entries.len();
        let depth = stage.top_k.min(n);
        let tail = entries.split_off(depth);
        let head = entries;
        let mut report = StageReport {
            stage: label.clone(),
            depth,
            backend_calls: 0,
            unanswered: 0,
            repairs: Vec::new(),
        };
        let reranked = if head.is_empty() {
            head
        } else {
            match stage.reranker {
                RerankerKind::Lrl => {
                    let config = ListwiseConfig {
                        window_size: stage.window_m,
                        passes: stage.passes,
                        budget: spec.budget,
                        params: spec.listwise_params,
                    };
                    let out = rerank_listwise(query, head, corpus, backend, &config).map_err(fail)?;
                    report.backend_calls = out.backend_calls;
                    report.repairs = out.repairs;
                    out.candidates
                }
                RerankerKind::Prl => {
                    let out = rerank_pointwise(query, &head, corpus, backend, &spec.budget, &spec.pointwise_params)
                        .map_err(fail)?;
                    report.backend_calls = out.backend_calls;
                    report.unanswered = out.unanswered;
                    out.list.entries
                }
            }
        };
        let mut merged = reranked;
        merged.extend(tail);
        entries = assign_scores(merged, n);
        reports.push(report);
    }
    Ok((RankedList::new(query.id.clone(), entries), reports))
}

/// Runs `spec` for every query in `queries` (plus, for an ingested run, any run query, which
/// fails if it has no query text).
pub fn run_pipeline(
    spec: &PipelineSpec,
    queries: &[Query],
    source: FirstStageSource<'_>,
    corpus: &Corpus,
    backend: &dyn Backend,
) -> Result<PipelineOutput> {
    spec.validate()?;
    let by_id: HashMap<&QueryId, &Query> = queries.iter().map(|q| (&q.id, q)).collect();
    let mut qids: BTreeSet<&QueryId> = by_id.keys().copied().collect();
    if let FirstStageSource::Run(run) = source {
        qids.extend(run.lists.keys());
    }
    let qids: Vec<&QueryId> = qids.into_iter().collect();

    let process = |qid: &QueryId| -> std::result::Result<(RankedList, Vec<StageReport>), QueryFailure> {
        let first_fail = |error: String| QueryFailure {
            qid: qid.to_string(),
            stage: "first-stage".into(),
            error,
        };
        let query = by_id
            .get(qid)
            .ok_or_else(|| first_fail("query text not found in the queries file".into()))?;
        let first = match source {
            FirstStageSource::Index(index) => {
                let k = match spec.first_stage {
                    FirstStage::Bm25 { k, .. } => k,
                    FirstStage::Run => default_first_k(),
                };
                index.search(query, k).map_err(|e| first_fail(e.to_string()))?
            }
            FirstStageSource::Run(run) => run.get(qid).cloned().unwrap_or_else(|| RankedList::empty(qid.clone())),
        };
        run_stages(spec, query, first, corpus, backend)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Param(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| qids.par_iter().map(|q| process(q)).collect());

    let mut output = PipelineOutput {
        run: RunFile::new(spec.tag.clone()),
        failures: Vec::new(),
        reports: BTreeMap::new(),
    };
    for (qid, result) in qids.into_iter().zip(results) {
        match result {
            Ok((list, reports)) => {
                output.run.insert(list);
                output.reports.insert(qid.clone(), reports);
            }
            Err(failure) => {
                tracing::error!(qid = %failure.qid, stage = %failure.stage, "{}", failure.error);
                output.failures.push(failure);
            }
        }
    }
    Ok(output)
}

/// Reciprocal-rank fusion: `score(d) = sum over runs of 1 / (k_rrf + rank)`, ties by docid.
pub fn fuse_runs(runs: &[RunFile], k_rrf: usize, tag: &str) -> Result<RunFile> {
    if runs.is_empty() {
        return Err(Error::Param("fusion needs at least one run".into()));
    }
    if k_rrf == 0 {
        return Err(Error::Param("k_rrf must be >= 1".into()));
    }
    let mut fused: BTreeMap<&QueryId, HashMap<&PassageId, f64>> = BTreeMap::new();
    for run in runs {
        for (qid, list) in &run.lists {
            let scores = fused.entry(qid).or_default();
            for c in &list.entries {
                *scores.entry(&c.passage_id).or_default() += 1.0 / (k_rrf + c.rank) as f64;
            }
        }
    }
    let mut out = RunFile::new(tag);
    for (qid, scores) in fused {
        let mut docs: Vec<(&PassageId, f64)> = scores.into_iter().collect();
        docs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let entries = docs
            .into_iter()
            .enumerate()
            .map(|(i, (p, s))| Candidate::new(p.clone(), s, i + 1))
            .collect();
        out.insert(RankedList::new(qid.clone(), entries));
    }
    Ok(out)
}
