//! nDCG@k and MRR@k over TREC runs.
//!
//! nDCG uses exponential gain `2^g - 1` with a `log2(i + 1)` discount, and the ideal ranking is
//! built from all judged grades of the query. Unjudged passages have grade 0. A query without
//! any positive judgment scores 0. MRR binarizes grades with `rel_threshold` (default 2, the
//! TREC Deep Learning convention for graded qrels).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::io_trec::RunFile;
use crate::model::{Qrels, QueryId, RankedList};

pub const DEFAULT_CUTOFF: usize = 10;
pub const DEFAULT_REL_THRESHOLD: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// `2^g - 1`.
    #[default]
    Exponential,
    /// `g`, as in trec_eval's `ndcg_cut`.
    Linear,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => f64::from(grade),
        }
    }
}

fn dcg(grades: impl Iterator<Item = u32>, gain: Gain) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| gain.apply(g) / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(ranking: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    ndcg_at_k_with_gain(ranking, qrels, k, Gain::Exponential)
}

pub fn ndcg_at_k_with_gain(ranking: &RankedList, qrels: &Qrels, k: usize, gain: Gain) -> f64 {
    let Some(judged) = qrels.for_query(&ranking.query_id) else {
        return 0.0;
    };
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k), gain);
    let actual = dcg(
        ranking
            .entries
            .iter()
            .take(k)
            .map(|c| judged.get(&c.passage_id).copied().unwrap_or(0)),
        gain,
    );
    actual / idcg
}

/// Reciprocal of the first rank within `k` whose grade is at least `rel_threshold`, else 0.
pub fn mrr_at_k(ranking: &RankedList, qrels: &Qrels, k: usize, rel_threshold: u32) -> f64 {
    let Some(judged) = qrels.for_query(&ranking.query_id) else {
        return 0.0;
    };
    ranking
        .entries
        .iter()
        .take(k)
        .position(|c| judged.get(&c.passage_id).is_some_and(|&g| g >= rel_threshold))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub ndcg_at_10: f64,
    pub mrr_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<QueryId, QueryMetrics>,
    pub mean_ndcg_at_10: f64,
    pub mean_mrr_at_10: f64,
    pub rel_threshold: u32,
    /// Run queries without any judgment, left out of the means.
    pub skipped: Vec<QueryId>,
}

impl EvalReport {
    pub fn evaluated(&self) -> usize {
        self.per_query.len()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_query
            .keys()
            .map(|q| q.as_str().len())
            .max()
            .unwrap_or(0)
            .max(5);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}", "qid", "nDCG@10", "MRR@10");
        for (qid, m) in &self.per_query {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}",
                qid.as_str(),
                m.ndcg_at_10,
                m.mrr_at_10
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9.4}",
            "all", self.mean_ndcg_at_10, self.mean_mrr_at_10
        );
        let _ = writeln!(
            out,
            "evaluated {} queries (MRR relevance >= {}), skipped {} unjudged",
            self.evaluated(),
            self.rel_threshold,
            self.skipped.len()
        );
        out
    }
}

/// Evaluates every judged query. Judged queries missing from the run score 0; run queries
/// missing from the qrels are skipped and listed.
pub fn evaluate_run(run: &RunFile, qrels: &Qrels, rel_threshold: u32) -> EvalReport {
    let mut per_query = BTreeMap::new();
    for qid in qrels.query_ids() {
        let empty;
        let list = match run.get(qid) {
            Some(list) => list,
            None => {
                empty = RankedList::empty(qid.clone());
                &empty
            }
        };
        per_query.insert(
            qid.clone(),
            QueryMetrics {
                ndcg_at_10: ndcg_at_k(list, qrels, DEFAULT_CUTOFF),
                mrr_at_10: mrr_at_k(list, qrels, DEFAULT_CUTOFF, rel_threshold),
            },
        );
    }
    let skipped = run
        .lists
        .keys()
        .filter(|q| qrels.for_query(q).is_none())
        .cloned()
        .collect();
    let n = per_query.len();
    let mean = |f: fn(&QueryMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_query.values().map(f).sum::<f64>() / n as f64
        }
    };
    EvalReport {
        mean_ndcg_at_10: mean(|m| m.ndcg_at_10),
        mean_mrr_at_10: mean(|m| m.mrr_at_10),
        per_query,
        rel_threshold,
        skipped,
    }
}
