//! Deterministic oracle backend answering from hidden relevance grades.
//!
//! Listwise prompts are answered with the window sorted by grade (descending, ties by window
//! position). Pointwise prompts get `P(True) = 0.2 + 0.6 * g / 3` for grade `g` on a 0..3
//! scale. With noise enabled, a per-prompt RNG seeded from `(seed, prompt)` applies adjacent
//! transpositions to listwise answers (one pass over positions, each swap with probability
//! `swap_prob`) and, with the same probability, shifts a pointwise grade one level up or down.
//! Seeding from the prompt keeps answers independent of call order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Completion, DecodeParams};
use crate::model::{Corpus, Qrels, Query};
use crate::prompts::{
    normalize_text, parse_listwise_prompt, parse_pointwise_prompt, PromptText, TokenCounter, WhitespaceCounter,
};

pub const MAX_MOCK_GRADE: u32 = 3;

/// Hidden grades keyed by query text and passage text, as they appear in prompts.
#[derive(Debug, Clone, Default)]
pub struct MockJudgments {
    grades: HashMap<String, HashMap<String, u32>>,
}

impl MockJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a grade. Texts are normalized like prompt texts; if two passages of a query
    /// share a text the larger grade wins.
    pub fn add(&mut self, query_text: &str, passage_text: &str, grade: u32) {
        let slot = self
            .grades
            .entry(normalize_text(query_text))
            .or_default()
            .entry(normalize_text(passage_text))
            .or_insert(grade);
        *slot = (*slot).max(grade);
    }

    /// Resolves qrels ids to texts. Judgments for unknown queries or passages are skipped.
    pub fn from_qrels(queries: &[Query], corpus: &Corpus, qrels: &Qrels) -> Self {
        let mut out = Self::new();
        for q in queries {
            let Some(judged) = qrels.for_query(&q.id) else {
                continue;
            };
            for (pid, &grade) in judged {
                if let Some(p) = corpus.get(pid) {
                    out.add(&q.text, &p.text, grade);
                }
            }
        }
        out
    }

    /// Grade of a passage as shown in a prompt. Truncated passages are matched by unique
    /// prefix; unknown passages have grade 0.
    pub fn grade(&self, query_text: &str, passage_text: &str) -> u32 {
        let Some(judged) = self.grades.get(query_text) else {
            return 0;
        };
        if let Some(&g) = judged.get(passage_text) {
            return g;
        }
        if passage_text.is_empty() {
            return 0;
        }
        let mut matches = judged.iter().filter(|(text, _)| text.starts_with(passage_text));
        match (matches.next(), matches.next()) {
            (Some((_, &g)), None) => g,
            _ => 0,
        }
    }
}

pub fn mock_probability(grade: u32) -> f64 {
    0.2 + 0.6 * f64::from(grade.min(MAX_MOCK_GRADE)) / f64::from(MAX_MOCK_GRADE)
}

#[derive(Debug, Clone, Copy)]
struct Noise {
    seed: u64,
    swap_prob: f64,
}

#[derive(Debug)]
pub struct MockBackend {
    judgments: MockJudgments,
    noise: Option<Noise>,
    calls: AtomicUsize,
    counter: WhitespaceCounter,
}

impl MockBackend {
    pub fn new(judgments: MockJudgments) -> Self {
        Self {
            judgments,
            noise: None,
            calls: AtomicUsize::new(0),
            counter: WhitespaceCounter,
        }
    }

    pub fn with_noise(judgments: MockJudgments, seed: u64, swap_prob: f64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&swap_prob) {
            return Err(BackendError::Config(format!(
                "swap probability must be in [0, 1], got {swap_prob}"
            )));
        }
        let mut mock = Self::new(judgments);
        mock.noise = Some(Noise { seed, swap_prob });
        Ok(mock)
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn rng_for(&self, prompt: &str) -> Option<(ChaCha8Rng, f64)> {
        let noise = self.noise?;
        let mut hasher = Sha256::new();
        hasher.update(noise.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
        Some((ChaCha8Rng::seed_from_u64(seed), noise.swap_prob))
    }

    fn listwise(&self, prompt: &str, query: &str, passages: &[String], params: &DecodeParams) -> Completion {
        let mut order: Vec<usize> = (0..passages.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.judgments.grade(query, &passages[i])));
        if let Some((mut rng, p)) = self.rng_for(prompt) {
            for i in 0..order.len().saturating_sub(1) {
                if rng.random_bool(p) {
                    order.swap(i, i + 1);
                }
            }
        }
        let ids: Vec<String> = order.iter().map(|i| format!("Passage{}", i + 1)).collect();
        let mut completion = Completion::text(format!("{}]", ids.join(", ")));
        if params.top_logprobs > 0 {
            completion.first_token_logprobs.insert("Passage".into(), 0.0);
        }
        completion
    }

    fn pointwise(&self, prompt: &str, query: &str, passage: &str, params: &DecodeParams) -> Completion {
        let mut grade = self.judgments.grade(query, passage).min(MAX_MOCK_GRADE);
        if let Some((mut rng, p)) = self.rng_for(prompt) {
            if rng.random_bool(p) {
                grade = if rng.random_bool(0.5) {
                    grade.saturating_sub(1)
                } else {
                    (grade + 1).min(MAX_MOCK_GRADE)
                };
            }
        }
        let p_true = mock_probability(grade);
        let mut options = [("True", p_true), ("False", 1.0 - p_true)];
        options.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut completion = Completion::text(options[0].0);
        for (token, p) in options.iter().take(params.top_logprobs as usize) {
            completion.first_token_logprobs.insert((*token).into(), p.ln());
        }
        completion
    }
}

impl Backend for MockBackend {
    fn complete(&self, prompt: &PromptText, params: &DecodeParams) -> Result<Completion, BackendError> {
        params.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(fields) = parse_listwise_prompt(&prompt.text) {
            return Ok(self.listwise(&prompt.text, &fields.query, &fields.passages, params));
        }
        if let Some((query, passage)) = parse_pointwise_prompt(&prompt.text) {
            return Ok(self.pointwise(&prompt.text, &query, &passage, params));
        }
        Err(BackendError::Protocol("mock backend: unrecognized prompt".into()))
    }

    fn counter(&self) -> &dyn TokenCounter {
        &self.counter
    }
}
