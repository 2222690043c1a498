//! Listwise reranking: one prompt per window, answered with an ordered list of window-local
//! passage identifiers (`Passage3, Passage1, ...]`).
//!
//! Model answers are repaired into a permutation of `1..=m`, in this order: indices outside
//! `1..=m` are dropped, repeats are dropped keeping the first occurrence, missing indices are
//! appended in ascending order, and an answer with no usable index falls back to the identity
//! order. Every repair is recorded.

use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use crate::backend::{Backend, DecodeParams};
use crate::error::{Error, Result};
use crate::model::{Candidate, Corpus, Passage, Query};
use crate::prompts::{build_listwise_prompt, PromptBudget};
use crate::window::progressive_rerank;

pub const DEFAULT_WINDOW_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RepairEvent {
    DuplicateDropped { index: usize },
    OutOfRangeIgnored { index: u64 },
    MissingAppended { indices: Vec<usize> },
    GarbageSkipped { text: String },
    FullFallback,
}

/// A repaired answer: `indices` is a permutation of `1..=m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOrder {
    pub indices: Vec<usize>,
    pub repairs: Vec<RepairEvent>,
}

impl ParsedOrder {
    pub fn is_fallback(&self) -> bool {
        self.repairs.contains(&RepairEvent::FullFallback)
    }
}

fn id_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"(?i)passage\s*(\d*)").expect("valid regex"))
}

/// Reads `Passage<i>` mentions up to the first `]` and repairs them into a permutation.
pub fn parse_id_list(text: &str, m: usize) -> ParsedOrder {
    assert!(m >= 1, "window size must be >= 1");
    let scanned = text.split(']').next().unwrap_or_default();
    let mut repairs = Vec::new();
    let mut seen = vec![false; m + 1];
    let mut indices = Vec::with_capacity(m);

    for caps in id_pattern().captures_iter(scanned) {
        let digits = caps.get(1).map_or("", |d| d.as_str());
        let Ok(index) = digits.parse::<u64>() else {
            repairs.push(RepairEvent::GarbageSkipped {
                text: caps[0].to_string(),
            });
            continue;
        };
        if index == 0 || index > m as u64 {
            repairs.push(RepairEvent::OutOfRangeIgnored { index });
            continue;
        }
        let index = index as usize;
        if seen[index] {
            repairs.push(RepairEvent::DuplicateDropped { index });
            continue;
        }
        seen[index] = true;
        indices.push(index);
    }

    if indices.is_empty() {
        repairs.push(RepairEvent::FullFallback);
        return ParsedOrder {
            indices: (1..=m).collect(),
            repairs,
        };
    }
    let missing: Vec<usize> = (1..=m).filter(|&i| !seen[i]).collect();
    if !missing.is_empty() {
        indices.extend(&missing);
        repairs.push(RepairEvent::MissingAppended { indices: missing });
    }
    ParsedOrder { indices, repairs }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub candidates: Vec<Candidate>,
    pub repairs: Vec<RepairEvent>,
    pub backend_calls: usize,
}

pub(crate) fn passage_texts(window: &[Candidate], texts: &Corpus) -> Result<Vec<Passage>> {
    window
        .iter()
        .map(|c| {
            texts
                .get(&c.passage_id)
                .cloned()
                .ok_or_else(|| Error::MissingPassage(c.passage_id.to_string()))
        })
        .collect()
}

/// Reorders one window with a single listwise prompt. Scores and ranks are left as they were;
/// see [`assign_scores`].
pub fn rerank_window(
    query: &Query,
    window: &[Candidate],
    texts: &Corpus,
    backend: &dyn Backend,
    budget: &PromptBudget,
    params: &DecodeParams,
) -> Result<WindowOutcome> {
    if window.is_empty() {
        return Err(Error::Param("cannot rerank an empty window".into()));
    }
    let passages = passage_texts(window, texts)?;
    let prompt = build_listwise_prompt(query, &passages, budget, backend.counter())?;
    let mut calls = 1;
    let mut parsed = parse_id_list(&backend.complete(&prompt, params)?.text, window.len());
    if parsed.is_fallback() && backend.retry_unparseable() {
        tracing::debug!(query = %query.id, "unparseable listwise answer, asking again");
        calls += 1;
        parsed = parse_id_list(&backend.complete(&prompt, params)?.text, window.len());
    }
    for event in &parsed.repairs {
        tracing::info!(
            target: "listrank::repairs",
            query = %query.id,
            event = %serde_json::to_string(event).unwrap_or_default(),
            "repaired listwise answer"
        );
    }
    Ok(WindowOutcome {
        candidates: parsed.indices.iter().map(|&i| window[i - 1].clone()).collect(),
        repairs: parsed.repairs,
        backend_calls: calls,
    })
}

/// Rank-based scores for an ordered list: the item at rank `r` scores `n_total - r + 1`.
pub fn assign_scores(ordered: Vec<Candidate>, n_total: usize) -> Vec<Candidate> {
    ordered
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.rank = i + 1;
            c.score = n_total as f64 - i as f64;
            c
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListwiseConfig {
    pub window_size: usize,
    pub passes: usize,
    pub budget: PromptBudget,
    pub params: DecodeParams,
}

impl Default for ListwiseConfig {
    fn default() -> Self {
        Self {
            window_size: DEFAULT_WINDOW_SIZE,
            passes: 1,
            budget: PromptBudget::default(),
            params: DecodeParams::listwise(),
        }
    }
}

/// Repairs made in one window of one pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRepairs {
    pub pass: usize,
    pub window: usize,
    pub events: Vec<RepairEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListwiseOutcome {
    pub candidates: Vec<Candidate>,
    pub repairs: Vec<WindowRepairs>,
    pub backend_calls: usize,
}

/// Runs `config.passes` progressive passes over `candidates`. Scores are not reassigned.
pub fn rerank_listwise(
    query: &Query,
    candidates: Vec<Candidate>,
    texts: &Corpus,
    backend: &dyn Backend,
    config: &ListwiseConfig,
) -> Result<ListwiseOutcome> {
    if config.passes == 0 {
        return Err(Error::Param("passes must be >= 1".into()));
    }
    let mut repairs = Vec::new();
    let mut calls = 0;
    let mut current = candidates;
    for pass in 0..config.passes {
        let mut window_no = 0;
        current = progressive_rerank(current, config.window_size, |window: &[Candidate]| {
            let outcome = rerank_window(query, window, texts, backend, &config.budget, &config.params)?;
            calls += outcome.backend_calls;
            if !outcome.repairs.is_empty() {
                repairs.push(WindowRepairs {
                    pass,
                    window: window_no,
                    events: outcome.repairs,
                });
            }
            window_no += 1;
            Ok::<_, Error>(outcome.candidates)
        })?;
    }
    Ok(ListwiseOutcome {
        candidates: current,
        repairs,
        backend_calls: calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Completion, MockBackend, MockJudgments, ScriptedBackend};
    use crate::model::{validate_ranked_list, PassageId, QueryId, RankedList};
    use proptest::prelude::*;

    #[test]
    fn clean_answer() {
        let p = parse_id_list("Passage3, Passage1, Passage2]", 3);
        assert_eq!(p.indices, vec![3, 1, 2]);
        assert!(p.repairs.is_empty());
    }

    #[test]
    fn repairs_in_scan_order() {
        let p = parse_id_list("Passage2, Passage2, Passage9]", 3);
        assert_eq!(p.indices, vec![2, 1, 3]);
        assert_eq!(
            p.repairs,
            vec![
                RepairEvent::DuplicateDropped { index: 2 },
                RepairEvent::OutOfRangeIgnored { index: 9 },
                RepairEvent::MissingAppended { indices: vec![1, 3] },
            ]
        );
    }

    #[test]
    fn prose_is_tolerated() {
        let p = parse_id_list("I think the most relevant is Passage1.", 2);
        assert_eq!(p.indices, vec![1, 2]);
        assert_eq!(p.repairs, vec![RepairEvent::MissingAppended { indices: vec![2] }]);
    }

    #[test]
    fn case_and_spacing() {
        let p = parse_id_list("passage 2 , PASSAGE1]", 2);
        assert_eq!(p.indices, vec![2, 1]);
        assert!(p.repairs.is_empty());
    }

    #[test]
    fn stops_at_closing_bracket() {
        let p = parse_id_list("Passage2] and then Passage1", 2);
        assert_eq!(p.indices, vec![2, 1]);
        assert_eq!(p.repairs, vec![RepairEvent::MissingAppended { indices: vec![1] }]);
    }

    #[test]
    fn garbage_falls_back() {
        let p = parse_id_list("¯\\_(ツ)_/¯", 4);
        assert_eq!(p.indices, vec![1, 2, 3, 4]);
        assert_eq!(p.repairs, vec![RepairEvent::FullFallback]);

        let p = parse_id_list("Passage, Passage0, Passage99999999999999999999999]", 2);
        assert_eq!(p.indices, vec![1, 2]);
        assert_eq!(
            p.repairs,
            vec![
                RepairEvent::GarbageSkipped { text: "Passage".into() },
                RepairEvent::OutOfRangeIgnored { index: 0 },
                RepairEvent::GarbageSkipped {
                    text: "Passage99999999999999999999999".into()
                },
                RepairEvent::FullFallback,
            ]
        );
    }

    #[test]
    fn repair_events_serialize_as_tagged_json() {
        let json = serde_json::to_string(&RepairEvent::MissingAppended { indices: vec![1, 3] }).unwrap();
        assert_eq!(json, r#"{"kind":"missing-appended","indices":[1,3]}"#);
    }

    fn fixture(grades: &[(&str, u32)]) -> (Query, Corpus, Vec<Candidate>, MockJudgments) {
        let query = Query::new(QueryId::new("q1").unwrap(), "the query").unwrap();
        let mut corpus = Corpus::new();
        let mut window = Vec::new();
        let mut judgments = MockJudgments::new();
        for (i, &(id, g)) in grades.iter().enumerate() {
            let pid = PassageId::new(id).unwrap();
            let text = format!("text of {id}");
            corpus.insert(pid.clone(), Passage::new(pid.clone(), text.clone()));
            judgments.add(&query.text, &text, g);
            window.push(Candidate::new(pid, (100 - i) as f64, i + 1));
        }
        (query, corpus, window, judgments)
    }

    fn ids(cs: &[Candidate]) -> Vec<&str> {
        cs.iter().map(|c| c.passage_id.as_str()).collect()
    }

    #[test]
    fn window_sorted_by_mock() {
        let (q, corpus, window, j) = fixture(&[("d_a", 1), ("d_b", 3), ("d_c", 0)]);
        let mock = MockBackend::new(j);
        let out = rerank_window(
            &q,
            &window,
            &corpus,
            &mock,
            &PromptBudget::default(),
            &DecodeParams::listwise(),
        )
        .unwrap();
        assert_eq!(ids(&out.candidates), vec!["d_b", "d_a", "d_c"]);
        // scores untouched
        assert_eq!(out.candidates[0].score, 99.0);
        assert_eq!(out.backend_calls, 1);
    }

    #[test]
    fn single_item_window_still_calls_backend() {
        let (q, corpus, window, j) = fixture(&[("d1", 2)]);
        let mock = MockBackend::new(j);
        let out = rerank_window(
            &q,
            &window,
            &corpus,
            &mock,
            &PromptBudget::default(),
            &DecodeParams::listwise(),
        )
        .unwrap();
        assert_eq!(ids(&out.candidates), vec!["d1"]);
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn garbage_answer_keeps_order() {
        let (q, corpus, window, _) = fixture(&[("d1", 0), ("d2", 3), ("d3", 1)]);
        let backend = ScriptedBackend::new(Completion::text("I cannot help with that."));
        let out = rerank_window(
            &q,
            &window,
            &corpus,
            &backend,
            &PromptBudget::default(),
            &DecodeParams::listwise(),
        )
        .unwrap();
        assert_eq!(ids(&out.candidates), vec!["d1", "d2", "d3"]);
        assert_eq!(out.repairs, vec![RepairEvent::FullFallback]);
    }

    #[test]
    fn missing_text_is_an_error() {
        let (q, _, window, _) = fixture(&[("d1", 0)]);
        let backend = ScriptedBackend::new(Completion::text("Passage1]"));
        let err = rerank_window(
            &q,
            &window,
            &Corpus::new(),
            &backend,
            &PromptBudget::default(),
            &DecodeParams::listwise(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingPassage(_)));
    }

    #[test]
    fn assigned_scores() {
        let (_, _, window, _) = fixture(&[("a", 0), ("b", 0), ("c", 0)]);
        let scored = assign_scores(window.into_iter().rev().collect(), 3);
        assert_eq!(scored.iter().map(|c| c.score).collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
        assert_eq!(scored.iter().map(|c| c.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(ids(&scored), vec!["c", "b", "a"]);
        let one = assign_scores(scored[..1].to_vec(), 100);
        assert_eq!(one[0].score, 100.0);
    }

    #[test]
    fn listwise_passes_and_calls() {
        let grades: Vec<(String, u32)> = (0..20).map(|i| (format!("d{i:02}"), (i % 4) as u32)).collect();
        let refs: Vec<(&str, u32)> = grades.iter().map(|(s, g)| (s.as_str(), *g)).collect();
        let (q, corpus, window, j) = fixture(&refs);
        let mock = MockBackend::new(j);
        let config = ListwiseConfig {
            passes: 2,
            ..Default::default()
        };
        let out = rerank_listwise(&q, window, &corpus, &mock, &config).unwrap();
        assert_eq!(out.backend_calls, 6);
        assert_eq!(mock.calls(), 6);
        assert!(out.repairs.is_empty());
    }

    proptest! {
        #[test]
        fn parse_always_yields_permutation(text in ".{0,200}", m in 1usize..30) {
            let p = parse_id_list(&text, m);
            let mut sorted = p.indices.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (1..=m).collect::<Vec<_>>());
        }

        #[test]
        fn parse_permutation_on_id_soup(ids in proptest::collection::vec(0u64..40, 0..40), m in 1usize..30) {
            let text = ids.iter().map(|i| format!("Passage{i}")).collect::<Vec<_>>().join(", ");
            let p = parse_id_list(&text, m);
            let mut sorted = p.indices.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (1..=m).collect::<Vec<_>>());
        }

        #[test]
        fn assigned_scores_are_valid(n in 0usize..50, extra in 0usize..50) {
            let cs: Vec<Candidate> = (0..n)
                .map(|i| Candidate::new(PassageId::new(format!("d{i}")).unwrap(), 0.0, 1))
                .collect();
            let list = RankedList::new(QueryId::new("q").unwrap(), assign_scores(cs, n + extra));
            prop_assert!(validate_ranked_list(&list).is_ok());
        }
    }
}
