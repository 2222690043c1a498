//! Pointwise reranking: each passage is scored on its own by the probability that the model's
//! first answer token is `True`.
//!
//! The probability mass of the casing and leading-space variants of `True` found among the
//! returned first-token alternatives is summed. The raw probability is used, not normalized
//! against `False`.

use rayon::prelude::*;

use crate::backend::{Backend, DecodeParams};
use crate::error::Result;
use crate::listwise::passage_texts;
use crate::model::{Candidate, Corpus, Passage, Query, RankedList};
use crate::prompts::{build_pointwise_prompt, PromptBudget};

pub const TRUE_VARIANTS: [&str; 4] = ["True", " True", "true", " true"];
pub const FALSE_VARIANTS: [&str; 4] = ["False", " False", "false", " false"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageScore {
    /// P(True), in [0, 1].
    pub probability: f64,
    /// Set when no True/False variant was among the returned alternatives.
    pub no_answer_token: bool,
}

pub fn score_passage(
    query: &Query,
    passage: &Passage,
    backend: &dyn Backend,
    budget: &PromptBudget,
    params: &DecodeParams,
) -> Result<PassageScore> {
    let prompt = build_pointwise_prompt(query, passage, budget, backend.counter())?;
    let completion = backend.complete(&prompt, params)?;
    let logprobs = &completion.first_token_logprobs;
    let probability: f64 = TRUE_VARIANTS
        .iter()
        .filter_map(|t| logprobs.get(*t))
        .map(|lp| lp.exp())
        .sum();
    let no_answer_token = !TRUE_VARIANTS
        .iter()
        .chain(FALSE_VARIANTS.iter())
        .any(|t| logprobs.contains_key(*t));
    if no_answer_token {
        tracing::warn!(
            query = %query.id,
            passage = %passage.id,
            "no True/False token among first-token alternatives; scoring 0"
        );
    }
    Ok(PassageScore {
        probability: probability.clamp(0.0, 1.0),
        no_answer_token,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseOutcome {
    pub list: RankedList,
    pub backend_calls: usize,
    /// Passages that were scored 0 for lack of an answer token.
    pub unanswered: usize,
}

/// Scores every candidate (concurrently) and sorts by probability, ties by prior rank.
/// A single failed passage fails the whole query.
pub fn rerank_pointwise(
    query: &Query,
    candidates: &[Candidate],
    texts: &Corpus,
    backend: &dyn Backend,
    budget: &PromptBudget,
    params: &DecodeParams,
) -> Result<PointwiseOutcome> {
    let passages = passage_texts(candidates, texts)?;
    let scores: Vec<PassageScore> = passages
        .par_iter()
        .map(|p| score_passage(query, p, backend, budget, params))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .probability
            .total_cmp(&scores[a].probability)
            .then_with(|| candidates[a].rank.cmp(&candidates[b].rank))
            .then_with(|| a.cmp(&b))
    });
    let entries = order
        .iter()
        .enumerate()
        .map(|(r, &i)| Candidate::new(candidates[i].passage_id.clone(), scores[i].probability, r + 1))
        .collect();
    Ok(PointwiseOutcome {
        list: RankedList::new(query.id.clone(), entries),
        backend_calls: candidates.len(),
        unanswered: scores.iter().filter(|s| s.no_answer_token).count(),
    })
}
